"""Shared flat key-value configuration for the CLI and service.

Format: one ``section.key = value`` per line, ``#`` comments. Every
threshold of every pipeline stage lives here; defaults are the documented
criteria values. Flags override file values, file values override defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .align import MatchConfig
from .audio import TrimConfig, VadConfig
from .corpus import CorpusFilterConfig, SentenceType
from .errors import ConfigError
from .qa import AudioCriteria
from .selection import DEFAULT_TYPE_BANDS, SelectionConfig

DEFAULTS: dict[str, object] = {
    "seed": 42,
    "corpus.min_words": 5,
    "corpus.max_words": 13,
    "corpus.reject_all_caps_len": 2,
    "select.target_words": 600_000,
    "select.words_per_second": 2.75,
    "select.candidate_pool": 512,
    "select.epsilon": 1e-6,
    "select.band.declarative": "0.75,0.85",
    "select.band.interrogative": "0.10,0.15",
    "select.band.exclamatory": "0.05,0.10",
    "vad.frame_ms": 25,
    "vad.hop_ms": 10,
    "vad.noise_percentile": 0.10,
    "vad.threshold_db_above_noise": 12.0,
    "vad.hangover_frames": 5,
    "vad.min_region_ms": 150,
    "vad.speech_floor_db": -40.0,
    "trim.max_edge_silence_ms": 100,
    "trim.min_padding_ms": 25,
    "match.max_norm_distance": 0.2,
    "match.max_length_diff_ratio": 0.2,
    "match.unit": "characters",
    "batch.min_gap_s": 2.0,
    "batch.asr_parallelism": 4,
    "criteria.sample_rate_hz": 88_000,
    "criteria.bits": 16,
    "criteria.channels": 1,
    "criteria.peak_db_min": -6.0,
    "criteria.peak_db_max": -3.0,
    "criteria.min_snr_db": 35.0,
    "criteria.min_duration_s": 2.0,
    "criteria.max_duration_s": 15.0,
    "criteria.max_internal_silence_s": 0.5,
    "criteria.max_edge_silence_ms": 100,
    "synth.sample_rate": 88_000,
    "synth.peak_db": -4.5,
    "synth.noise_db": -66.0,
    "store.lease_s": 900.0,
    "service.workers": 2,
}


def _coerce(raw: str, like) -> object:
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int) and not isinstance(like, bool):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


@dataclass
class ForgeConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def get(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, value) -> None:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    # typed sub-config builders -------------------------------------------

    def corpus_filter(self, abbreviations: set[str] | None = None) -> CorpusFilterConfig:
        return CorpusFilterConfig(
            min_words=self.get("corpus.min_words"),
            max_words=self.get("corpus.max_words"),
            abbreviation_lexicon=abbreviations or set(),
            reject_all_caps_len=self.get("corpus.reject_all_caps_len"),
        )

    def selection(self, **overrides) -> SelectionConfig:
        bands = {}
        for stype in SentenceType:
            raw = str(self.get(f"select.band.{stype.value}"))
            lo, hi = (float(x) for x in raw.split(","))
            bands[stype] = (lo, hi)
        params = {
            "target_words": self.get("select.target_words"),
            "words_per_second": self.get("select.words_per_second"),
            "type_bands": bands or dict(DEFAULT_TYPE_BANDS),
            "candidate_pool": self.get("select.candidate_pool"),
            "epsilon": self.get("select.epsilon"),
            "rng_seed": self.get("seed"),
        }
        params.update(overrides)
        return SelectionConfig(**params)

    def vad(self) -> VadConfig:
        return VadConfig(
            frame_ms=self.get("vad.frame_ms"),
            hop_ms=self.get("vad.hop_ms"),
            noise_percentile=self.get("vad.noise_percentile"),
            threshold_db_above_noise=self.get("vad.threshold_db_above_noise"),
            hangover_frames=self.get("vad.hangover_frames"),
            min_region_ms=self.get("vad.min_region_ms"),
            speech_floor_db=self.get("vad.speech_floor_db"),
        )

    def trim(self) -> TrimConfig:
        return TrimConfig(
            max_edge_silence_ms=self.get("trim.max_edge_silence_ms"),
            min_padding_ms=self.get("trim.min_padding_ms"),
        )

    def match(self) -> MatchConfig:
        return MatchConfig(
            max_norm_distance=self.get("match.max_norm_distance"),
            max_length_diff_ratio=self.get("match.max_length_diff_ratio"),
            unit=self.get("match.unit"),
        )

    def criteria(self) -> AudioCriteria:
        return AudioCriteria(
            required_sample_rate_hz=self.get("criteria.sample_rate_hz"),
            required_bits=self.get("criteria.bits"),
            required_channels=self.get("criteria.channels"),
            peak_db_range=(self.get("criteria.peak_db_min"), self.get("criteria.peak_db_max")),
            min_snr_db=self.get("criteria.min_snr_db"),
            min_duration_s=self.get("criteria.min_duration_s"),
            max_duration_s=self.get("criteria.max_duration_s"),
            max_internal_silence_s=self.get("criteria.max_internal_silence_s"),
            max_edge_silence_ms=self.get("criteria.max_edge_silence_ms"),
        )


def load_config(path=None, overrides: dict[str, object] | None = None) -> ForgeConfig:
    cfg = ForgeConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in cfg.values:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                cfg.values[key] = _coerce(raw, DEFAULTS[key])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}") from None
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    return cfg
