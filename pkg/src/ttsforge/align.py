"""Segment-to-sentence assignment for batch recordings.

Batch WAVs are named ``start_ID-end_ID.wav``; their VAD utterances are
transcribed by a pluggable ASR adapter and matched against the script window
by Levenshtein distance over normalized text. A segment is assigned to the
closest sentence when the distance stays under 20% of the shorter string and
the length difference stays within 20% of the shorter string. When several
accepted segments claim one sentence, the temporally last reading wins and
earlier ones are marked superseded.
"""

from __future__ import annotations

import logging
import random
import re
import shlex
import subprocess
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .audio import (
    AudioBuffer,
    SpeechRegion,
    TrimConfig,
    VadAnalysis,
    VadConfig,
    group_by_gap,
    read_wav,
    write_wav,
)
from .corpus import Sentence
from .errors import AsrError, DataError, FilenameError, NoSpeechError

log = logging.getLogger(__name__)

_ID_RE = re.compile(r"^([A-Za-z]+)(\d+)$")


@dataclass(frozen=True)
class BatchName:
    start_id: str
    end_id: str
    language_prefix: str

    @property
    def start_ordinal(self) -> int:
        return int(_ID_RE.match(self.start_id).group(2))

    @property
    def end_ordinal(self) -> int:
        return int(_ID_RE.match(self.end_id).group(2))

    def covers(self, sentence_id: str) -> bool:
        m = _ID_RE.match(sentence_id)
        if not m or m.group(1) != self.language_prefix:
            return False
        return self.start_ordinal <= int(m.group(2)) <= self.end_ordinal


def parse_sentence_id(value: str) -> tuple[str, int]:
    m = _ID_RE.match(value)
    if not m:
        raise FilenameError(f"not a sentence id: {value!r}")
    return m.group(1), int(m.group(2))


def parse_batch_filename(name: str) -> BatchName:
    """Parse ``start_ID-end_ID.wav``; both ids share a prefix and start <= end."""
    stem = Path(name).stem
    parts = stem.split("-")
    if len(parts) != 2:
        raise FilenameError(
            f"{name!r}: expected start_ID-end_ID.wav with a single hyphen"
        )
    start, end = parts
    sm, em = _ID_RE.match(start), _ID_RE.match(end)
    if not sm or not em:
        raise FilenameError(f"{name!r}: ids must be letters followed by digits")
    if sm.group(1) != em.group(1):
        raise FilenameError(
            f"{name!r}: prefix mismatch {sm.group(1)!r} vs {em.group(1)!r}"
        )
    if int(sm.group(2)) > int(em.group(2)):
        raise FilenameError(f"{name!r}: start id is after end id")
    return BatchName(start_id=start, end_id=end, language_prefix=sm.group(1))


def normalize_text(text: str) -> str:
    """Lowercase, compatibility-decompose, drop punctuation/symbols, collapse
    whitespace. Matching must be punctuation-blind: ASR output is unpunctuated
    while script text is punctuated."""
    text = unicodedata.normalize("NFKD", text).lower()
    kept = []
    for ch in text:
        if unicodedata.category(ch)[0] in ("P", "S"):
            continue
        kept.append(ch)
    return " ".join("".join(kept).split())


@dataclass(frozen=True)
class Transcript:
    segment_index: int
    text: str
    normalized: str = ""

    def __post_init__(self):
        if not self.normalized:
            object.__setattr__(self, "normalized", normalize_text(self.text))


@dataclass
class MatchConfig:
    max_norm_distance: float = 0.2
    max_length_diff_ratio: float = 0.2
    unit: str = "characters"  # or "words"

    def __post_init__(self):
        if not (0.0 < self.max_norm_distance <= 1.0):
            raise DataError("max_norm_distance must be in (0, 1]")
        if not (0.0 < self.max_length_diff_ratio <= 1.0):
            raise DataError("max_length_diff_ratio must be in (0, 1]")
        if self.unit not in ("characters", "words"):
            raise DataError(f"unknown match unit {self.unit!r}")


@dataclass
class MatchResult:
    segment_index: int
    sentence_id: str | None
    distance: int
    norm_distance: float
    accepted: bool
    rejection: str | None = None

    def to_record(self) -> dict:
        return {
            "segment_index": self.segment_index,
            "sentence_id": self.sentence_id,
            "distance": self.distance,
            "norm_distance": round(self.norm_distance, 6),
            "accepted": self.accepted,
            "rejection": self.rejection,
        }


@dataclass
class AssignmentReport:
    total_segments: int
    assigned: int
    not_assigned: int
    percent_assigned: float
    duration_before_match_s: float
    duration_after_match_s: float
    duration_after_trim_s: float

    def to_record(self) -> dict:
        return {
            "record": "assignment_report",
            "total_segments": self.total_segments,
            "assigned": self.assigned,
            "not_assigned": self.not_assigned,
            "percent_assigned": self.percent_assigned,
            "duration_before_match_s": round(self.duration_before_match_s, 2),
            "duration_after_match_s": round(self.duration_after_match_s, 2),
            "duration_after_trim_s": round(self.duration_after_trim_s, 2),
        }


def levenshtein(a, b) -> int:
    """Unit-cost edit distance between two sequences (strings or token
    lists), O(|a|*|b|) time and O(min) memory."""
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 0:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        curr = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            curr[j] = min(
                prev[j] + 1,
                curr[j - 1] + 1,
                prev[j - 1] + (0 if ca == cb else 1),
            )
        prev = curr
    return prev[len(b)]


def _judge(
    distance: int, len_a: int, len_b: int, cfg: MatchConfig
) -> tuple[float, bool, str | None]:
    shorter = min(len_a, len_b)
    if shorter == 0:
        return 1.0, False, "empty_transcript"
    norm = distance / shorter
    if abs(len_a - len_b) > cfg.max_length_diff_ratio * shorter:
        return norm, False, "over_length_diff"
    if not (norm < cfg.max_norm_distance):
        return norm, False, "over_distance"
    return norm, True, None


def _units(text: str, cfg: MatchConfig):
    return text.split() if cfg.unit == "words" else text


def accept_match(
    asr_normalized: str, sentence_normalized: str, cfg: MatchConfig | None = None
) -> tuple[float, bool, str | None]:
    """Apply both acceptance conditions; distance strict, length diff not."""
    cfg = cfg or MatchConfig()
    a, b = _units(asr_normalized, cfg), _units(sentence_normalized, cfg)
    return _judge(levenshtein(a, b), len(a), len(b), cfg)


class _EncodedWindow:
    """Codepoint matrix over a script window for the vectorized distance DP."""

    def __init__(self, sentences: list[Sentence]):
        self.sentences = sorted(sentences, key=lambda s: parse_sentence_id(s.id)[1])
        self.normalized = [normalize_text(s.text) for s in self.sentences]
        self.lengths = np.array([len(t) for t in self.normalized], dtype=np.int32)
        width = int(self.lengths.max(initial=1))
        self.chars = np.zeros((len(self.sentences), width), dtype=np.uint32)
        for row, text in enumerate(self.normalized):
            if text:
                self.chars[row, : len(text)] = np.frombuffer(
                    text.encode("utf-32-le"), dtype=np.uint32
                )

    def distances(self, transcript_normalized: str) -> np.ndarray:
        """Levenshtein distance to every window sentence at once.

        Row DP with the insert term folded in as a prefix minimum, so each
        transcript character costs a handful of vector ops over the window.
        """
        t = np.frombuffer(transcript_normalized.encode("utf-32-le"), dtype=np.uint32)
        n_rows, width = self.chars.shape
        prev = np.broadcast_to(
            np.arange(width + 1, dtype=np.int32), (n_rows, width + 1)
        ).copy()
        for i, ch in enumerate(t, start=1):
            cost = (self.chars != ch).astype(np.int32)
            cand = np.empty_like(prev)
            cand[:, 0] = i
            np.minimum(prev[:, 1:] + 1, prev[:, :-1] + cost, out=cand[:, 1:])
            shifted = cand - np.arange(width + 1, dtype=np.int32)
            np.minimum.accumulate(shifted, axis=1, out=shifted)
            prev = shifted + np.arange(width + 1, dtype=np.int32)
        return prev[np.arange(n_rows), self.lengths]


def match_segments(
    transcripts: list[Transcript],
    window: list[Sentence],
    cfg: MatchConfig | None = None,
) -> list[MatchResult]:
    """Match each transcript to its closest window sentence, then resolve
    repeats so each sentence keeps only the last accepted segment."""
    cfg = cfg or MatchConfig()
    if not window:
        raise DataError("empty script window")
    encoded = _EncodedWindow(window)
    results: list[MatchResult] = []
    for transcript in transcripts:
        text = transcript.normalized
        if not text:
            results.append(
                MatchResult(transcript.segment_index, None, 0, 1.0, False, "empty_transcript")
            )
            continue
        if cfg.unit == "characters":
            distances = encoded.distances(text)
        else:
            words = text.split()
            distances = np.array(
                [levenshtein(words, norm.split()) for norm in encoded.normalized],
                dtype=np.int64,
            )
        best = int(np.argmin(distances))  # ties resolve to the lowest id
        sentence = encoded.sentences[best]
        d = int(distances[best])
        len_a = len(_units(text, cfg))
        len_b = len(_units(encoded.normalized[best], cfg))
        norm, accepted, reason = _judge(d, len_a, len_b, cfg)
        results.append(
            MatchResult(transcript.segment_index, sentence.id, d, norm, accepted, reason)
        )

    last_for: dict[str, int] = {}
    for pos, result in enumerate(results):
        if result.accepted:
            last_for[result.sentence_id] = pos
    for pos, result in enumerate(results):
        if result.accepted and last_for[result.sentence_id] != pos:
            result.accepted = False
            result.rejection = "superseded_by_repeat"
    return results


def compute_wer(reference: str, hypothesis: str) -> float:
    """Word-level edit distance over the normalized reference word count."""
    ref_words = normalize_text(reference).split()
    hyp_words = normalize_text(hypothesis).split()
    if not ref_words:
        raise DataError("WER reference is empty after normalization")
    return levenshtein(ref_words, hyp_words) / len(ref_words)


@dataclass(frozen=True)
class AsrRequest:
    audio_path: Path | None
    language: str
    segment_index: int


class AsrClient(Protocol):
    requires_audio: bool

    def transcribe(self, request: AsrRequest) -> str: ...


class MockAsr:
    """Deterministic stand-in for a speech recognizer.

    Reads a sidecar truth table (``index<TAB>text`` lines) and answers with
    the true text, optionally corrupted by seeded character substitutions at
    a fixed rate. Deterministic per (seed, segment index)."""

    requires_audio = False

    def __init__(self, truth_path, corruption_rate: float = 0.0, seed: int = 42):
        if not (0.0 <= corruption_rate < 1.0):
            raise DataError("corruption_rate must be in [0, 1)")
        self.corruption_rate = corruption_rate
        self.seed = seed
        self.truth: dict[int, str] = {}
        with open(truth_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                index, _, text = line.partition("\t")
                self.truth[int(index)] = text

    def transcribe(self, request: AsrRequest) -> str:
        text = self.truth.get(request.segment_index)
        if text is None:
            raise AsrError(f"no truth entry for segment {request.segment_index}")
        if self.corruption_rate == 0.0:
            return text
        rng = random.Random(self.seed * 1_000_003 + request.segment_index)
        out = []
        for ch in text:
            if ch.isalpha() and rng.random() < self.corruption_rate:
                out.append(rng.choice("abcdefghijklmnopqrstuvwxyz"))
            else:
                out.append(ch)
        return "".join(out)


class CommandAsr:
    """External recognizer: one process per utterance, audio path as the last
    argument, transcript on stdout."""

    requires_audio = True

    def __init__(self, command_template: str):
        self.command_template = command_template

    def transcribe(self, request: AsrRequest) -> str:
        argv = shlex.split(self.command_template.format(lang=request.language))
        argv.append(str(request.audio_path))
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=600)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise AsrError(f"asr command failed: {exc}") from exc
        if proc.returncode != 0:
            raise AsrError(
                f"asr command exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        return proc.stdout.strip()


@dataclass
class BatchResult:
    batch_name: BatchName
    match_results: list[MatchResult]
    report: AssignmentReport
    segment_files: dict[str, Path] = field(default_factory=dict)
    segment_durations: dict[str, float] = field(default_factory=dict)
    transcripts: list[Transcript] = field(default_factory=list)


def _pad_regions(
    regions: list[SpeechRegion], pad: int, total: int
) -> list[SpeechRegion]:
    """Widen utterance regions into the surrounding gaps (never past the
    midpoint of a gap) so trimming has silence to keep."""
    padded = []
    for i, region in enumerate(regions):
        prev_end = regions[i - 1].end_sample if i > 0 else 0
        next_start = regions[i + 1].start_sample if i + 1 < len(regions) else total
        lead = min(pad, (region.start_sample - prev_end) // 2 if i > 0 else region.start_sample)
        tail = min(pad, (next_start - region.end_sample) // 2 if i + 1 < len(regions) else next_start - region.end_sample)
        padded.append(
            SpeechRegion(region.start_sample - max(lead, 0), region.end_sample + max(tail, 0))
        )
    return padded


def process_batch(
    batch_path,
    script: list[Sentence],
    asr: AsrClient,
    out_dir,
    *,
    vad: VadConfig | None = None,
    trim: TrimConfig | None = None,
    match_cfg: MatchConfig | None = None,
    min_gap_s: float = 2.0,
    language: str = "",
    asr_parallelism: int = 4,
) -> BatchResult:
    """Run the full batch pipeline: VAD split, per-utterance ASR, matching,
    trimming, and per-sentence WAV output named ``<sentence_id>.wav``.

    Individual ASR failures leave that segment unassigned; they never abort
    the batch.
    """
    batch_path = Path(batch_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vad = vad or VadConfig()
    trim = trim or TrimConfig()
    match_cfg = match_cfg or MatchConfig()

    batch_name = parse_batch_filename(batch_path.name)
    window = [s for s in script if batch_name.covers(s.id)]
    if not window:
        raise DataError(
            f"script has no sentences in [{batch_name.start_id}, {batch_name.end_id}]"
        )

    buf = read_wav(batch_path)
    analysis = VadAnalysis(buf, vad)
    utterances = group_by_gap(
        analysis.regions(), min_gap_s, sample_rate=buf.sample_rate
    )
    # pad wider than the trim window so trimming has real slack to cut
    pad = 3 * trim.max_edge_silence_ms * buf.sample_rate // 1000
    segments = _pad_regions(utterances, pad, len(buf))

    transcripts = _transcribe_segments(
        buf, segments, asr, out_dir, language, asr_parallelism
    )
    match_results = match_segments(transcripts, window, match_cfg)

    segment_files: dict[str, Path] = {}
    segment_durations: dict[str, float] = {}
    dur_before = sum(r.duration_s(buf.sample_rate) for r in segments)
    dur_after_match = 0.0
    dur_after_trim = 0.0
    assigned = 0
    for result in match_results:
        if not result.accepted:
            continue
        region = segments[result.segment_index]
        try:
            trimmed = analysis.trim(region, trim)
        except NoSpeechError:
            result.accepted = False
            result.rejection = "empty_transcript"
            continue
        assigned += 1
        dur_after_match += region.duration_s(buf.sample_rate)
        dur_after_trim += trimmed.duration_s(buf.sample_rate)
        target = out_dir / f"{result.sentence_id}.wav"
        write_wav(buf.slice(trimmed.start_sample, trimmed.end_sample), target)
        segment_files[result.sentence_id] = target
        segment_durations[result.sentence_id] = trimmed.duration_s(buf.sample_rate)

    total = len(match_results)
    report = AssignmentReport(
        total_segments=total,
        assigned=assigned,
        not_assigned=total - assigned,
        percent_assigned=assigned / total if total else 0.0,
        duration_before_match_s=dur_before,
        duration_after_match_s=dur_after_match,
        duration_after_trim_s=dur_after_trim,
    )
    return BatchResult(
        batch_name=batch_name,
        match_results=match_results,
        report=report,
        segment_files=segment_files,
        segment_durations=segment_durations,
        transcripts=transcripts,
    )


def _transcribe_segments(
    buf: AudioBuffer,
    segments: list[SpeechRegion],
    asr: AsrClient,
    out_dir: Path,
    language: str,
    parallelism: int,
) -> list[Transcript]:
    utterance_dir = out_dir / "_utterances"
    requests = []
    for i, region in enumerate(segments):
        path = None
        if asr.requires_audio:
            utterance_dir.mkdir(parents=True, exist_ok=True)
            path = utterance_dir / f"{i:05d}.wav"
            write_wav(buf.slice(region.start_sample, region.end_sample), path)
        requests.append(AsrRequest(path, language, i))

    def run(request: AsrRequest) -> str:
        try:
            return asr.transcribe(request)
        except AsrError as exc:
            log.warning("segment %d: %s", request.segment_index, exc)
            return ""

    if parallelism > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            texts = list(pool.map(run, requests))
    else:
        texts = [run(r) for r in requests]
    return [Transcript(i, text) for i, text in enumerate(texts)]


def rematch_segmented(
    path,
    script: list[Sentence],
    asr: AsrClient,
    cfg: MatchConfig | None = None,
    *,
    language: str = "",
) -> MatchResult:
    """Cross-check a single ``<sentence_id>.wav`` against its labeled
    sentence; on failure, search the whole script for a relabel, else flag
    the file as mislabeled (accepted=False, sentence_id=None)."""
    cfg = cfg or MatchConfig()
    path = Path(path)
    stem = path.stem
    parse_sentence_id(stem)  # raises FilenameError on bad shape
    by_id = {s.id: s for s in script}
    labeled = by_id.get(stem)
    if labeled is None:
        raise DataError(f"{stem} not present in script")

    text = asr.transcribe(AsrRequest(path, language, 0))
    transcript = Transcript(0, text)
    norm, accepted, reason = accept_match(
        transcript.normalized, normalize_text(labeled.text), cfg
    )
    if accepted:
        d = levenshtein(
            _units(transcript.normalized, cfg), _units(normalize_text(labeled.text), cfg)
        )
        return MatchResult(0, labeled.id, d, norm, True, None)

    candidates = match_segments([transcript], script, cfg)
    best = candidates[0]
    if best.accepted:
        return best
    best.sentence_id = None
    return best
