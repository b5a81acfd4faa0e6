"""Exception hierarchy shared by the pipeline modules.

Errors fall into two broad families: configuration problems (caller gave us
an unusable config or flag) and data problems (the input file or request is
bad). The CLI maps these onto its exit-code contract and the HTTP layer maps
the store errors onto status codes.
"""


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ForgeError):
    """Invalid configuration value or unusable combination of settings."""


class DataError(ForgeError):
    """Input data violates a documented contract."""


class CorpusDecodeError(DataError):
    """Corpus file is not valid UTF-8."""

    def __init__(self, path, line_number: int):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}: invalid UTF-8 at line {line_number}")


class PhonemizerError(DataError):
    """External phonemizer failed or broke the line protocol."""


class WavParseError(DataError):
    """Malformed RIFF/WAVE container."""

    def __init__(self, message: str, byte_offset: int):
        self.byte_offset = byte_offset
        super().__init__(f"{message} (at byte {byte_offset})")


class UnsupportedFormatError(DataError):
    """WAV is well-formed but violates a fixed audio criterion."""

    def __init__(self, criterion: str, measured):
        self.criterion = criterion
        self.measured = measured
        super().__init__(f"unsupported format: {criterion}={measured!r}")


class NoSpeechError(DataError):
    """A region expected to contain speech has no speech frames."""


class UndefinedSnrError(DataError):
    """SNR cannot be estimated (no speech or no noise frames)."""


class FilenameError(DataError):
    """Batch or segment filename does not follow the naming convention."""


class AsrError(DataError):
    """ASR adapter failed to produce a transcript for one utterance."""


class SelectionStalledError(DataError):
    """No quota-admissible candidate remains before the word target is met."""

    def __init__(self, violated_bands: dict):
        self.violated_bands = violated_bands
        super().__init__(f"selection stalled; violated type bands: {violated_bands}")


class NotFoundError(ForgeError):
    """Entity does not exist."""


class ForbiddenError(ForgeError):
    """Caller is not allowed to perform this operation."""


class ConflictError(ForgeError):
    """Operation conflicts with the entity's current state."""


class LeaseExpiredError(ForgeError):
    """Sample lock lease has lapsed."""


class StoreValidationError(ForgeError):
    """Payload rejected by the store at enqueue/ingest time."""
