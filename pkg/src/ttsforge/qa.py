"""Recording validation against the fixed audio criteria and dataset stats.

Every criterion is always evaluated independently and lands in the report
exactly once; the overall verdict is the conjunction. Speech-rate, accent and
artifact judgements are human calls and surface as annotation discard
reasons, not automated checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .audio import (
    AudioBuffer,
    SpeechRegion,
    VadAnalysis,
    VadConfig,
    estimate_snr,
    peak_dbfs,
)
from .errors import UndefinedSnrError


class DiscardReason(str, Enum):
    REPETITION = "repetition"
    BAD_PROSODY = "bad_prosody"
    TEXT_AUDIO_INCONSISTENCY = "text_audio_inconsistency"
    MISPRONUNCIATION = "mispronunciation"
    TRUNCATION = "truncation"
    SOUND_ARTIFACT = "sound_artifact"
    OTHER = "other"  # requires non-empty feedback


@dataclass
class AudioCriteria:
    required_sample_rate_hz: int = 88_000
    required_bits: int = 16
    required_channels: int = 1
    peak_db_range: tuple[float, float] = (-6.0, -3.0)
    min_snr_db: float = 35.0
    min_duration_s: float = 2.0
    max_duration_s: float = 15.0
    max_internal_silence_s: float = 0.5
    max_edge_silence_ms: int = 100


@dataclass
class CriterionResult:
    criterion: str
    measured: object
    passed: bool

    def to_record(self) -> dict:
        return {
            "criterion": self.criterion,
            "measured": _jsonable(self.measured),
            "passed": self.passed,
        }


@dataclass
class QaReport:
    sample_id: str
    results: list[CriterionResult] = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(r.passed for r in self.results)

    def result(self, criterion: str) -> CriterionResult:
        for r in self.results:
            if r.criterion == criterion:
                return r
        raise KeyError(criterion)

    def failed_criteria(self) -> list[str]:
        return [r.criterion for r in self.results if not r.passed]

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "overall": self.overall,
            "results": [r.to_record() for r in self.results],
        }


def _jsonable(value):
    if isinstance(value, float):
        if value == float("inf"):
            return "inf"
        if value == float("-inf"):
            return "-inf"
    return value


CRITERIA_CODES = (
    "sample_rate",
    "bit_depth",
    "channel_count",
    "peak_level",
    "snr",
    "duration_min",
    "duration_max",
    "internal_silence",
    "edge_silence",
)


def validate_audio(
    buf: AudioBuffer,
    regions: list[SpeechRegion] | None = None,
    criteria: AudioCriteria | None = None,
    *,
    sample_id: str = "",
    vad: VadConfig | None = None,
    bits: int = 16,
    channels: int | None = None,
) -> QaReport:
    """Evaluate every audio criterion; failures are report rows, not errors.

    ``regions`` defaults to a fresh VAD pass. Speech-dependent measurements
    that cannot be taken (no speech, no noise) report measured=None and fail.
    """
    criteria = criteria or AudioCriteria()
    analysis = VadAnalysis(buf, vad)
    if regions is None:
        regions = analysis.regions()
    report = QaReport(sample_id=sample_id)
    add = report.results.append

    add(
        CriterionResult(
            "sample_rate",
            buf.sample_rate,
            buf.sample_rate == criteria.required_sample_rate_hz,
        )
    )
    add(CriterionResult("bit_depth", bits, bits == criteria.required_bits))
    measured_channels = channels if channels is not None else buf.channel_count
    add(
        CriterionResult(
            "channel_count",
            measured_channels,
            measured_channels == criteria.required_channels,
        )
    )

    if len(buf) > 0:
        peak = peak_dbfs(buf)
        lo, hi = criteria.peak_db_range
        add(CriterionResult("peak_level", peak, lo <= peak <= hi))
    else:
        add(CriterionResult("peak_level", None, False))

    try:
        snr = estimate_snr(buf, regions)
        add(CriterionResult("snr", snr, snr >= criteria.min_snr_db))
    except UndefinedSnrError:
        add(CriterionResult("snr", None, False))

    duration = buf.duration_s
    add(CriterionResult("duration_min", duration, duration >= criteria.min_duration_s))
    add(CriterionResult("duration_max", duration, duration <= criteria.max_duration_s))

    if regions:
        span = SpeechRegion(regions[0].start_sample, regions[-1].end_sample)
        silence = analysis.max_internal_silence_s(span)
        add(
            CriterionResult(
                "internal_silence", silence, silence <= criteria.max_internal_silence_s
            )
        )
        lead_ms = 1000.0 * regions[0].start_sample / buf.sample_rate
        tail_ms = 1000.0 * (len(buf) - regions[-1].end_sample) / buf.sample_rate
        edge_ms = max(lead_ms, tail_ms)
        add(
            CriterionResult(
                "edge_silence", edge_ms, edge_ms <= criteria.max_edge_silence_ms
            )
        )
    else:
        add(CriterionResult("internal_silence", None, False))
        add(CriterionResult("edge_silence", None, False))

    return report


def unreadable_file_report(sample_id: str, criterion: str, measured) -> QaReport:
    """Report for a file rejected at parse time: the violated criterion is
    failed with its measured value, everything else is unmeasured."""
    # a non-PCM format tag violates the same criteria row as the bit depth
    code_for = criterion if criterion in CRITERIA_CODES else "bit_depth"
    report = QaReport(sample_id=sample_id)
    for code in CRITERIA_CODES:
        if code == code_for:
            report.results.append(CriterionResult(code, measured, False))
        else:
            report.results.append(CriterionResult(code, None, False))
    return report


@dataclass
class DatasetStats:
    n_samples: int = 0
    n_annotated: int = 0
    n_edited: int = 0
    n_discarded: int = 0
    n_pending: int = 0
    n_locked: int = 0
    percent_annotated: float = 0.0
    percent_edited: float = 0.0
    percent_discarded: float = 0.0
    discard_reasons: dict[str, int] = field(default_factory=dict)
    total_duration_s: float = 0.0
    annotated_duration_s: float = 0.0
    percent_assigned: float | None = None
    duration_before_match_s: float | None = None
    duration_after_match_s: float | None = None
    duration_after_trim_s: float | None = None

    def to_record(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_annotated": self.n_annotated,
            "n_edited": self.n_edited,
            "n_discarded": self.n_discarded,
            "n_pending": self.n_pending,
            "n_locked": self.n_locked,
            "percent_annotated": self.percent_annotated,
            "percent_edited": self.percent_edited,
            "percent_discarded": self.percent_discarded,
            "discard_reasons": dict(self.discard_reasons),
            "total_duration_s": round(self.total_duration_s, 2),
            "annotated_duration_s": round(self.annotated_duration_s, 2),
            "percent_assigned": self.percent_assigned,
            "duration_before_match_s": self.duration_before_match_s,
            "duration_after_match_s": self.duration_after_match_s,
            "duration_after_trim_s": self.duration_after_trim_s,
        }


def dataset_stats(samples: list, annotations: dict | None = None) -> DatasetStats:
    """Aggregate sample-level outcomes into the dataset summary.

    ``samples`` need ``status``, ``original_text``, ``final_text``,
    ``duration_s`` and optionally ``discard_reasons`` attributes or keys.
    Percentages are on a 0..100 scale and are 0 for an empty dataset; a
    discarded sample never counts as edited.
    """

    def get(sample, name, default=None):
        if isinstance(sample, dict):
            return sample.get(name, default)
        return getattr(sample, name, default)

    stats = DatasetStats(n_samples=len(samples))
    for sample in samples:
        status = get(sample, "status")
        duration = float(get(sample, "duration_s", 0.0) or 0.0)
        stats.total_duration_s += duration
        if status == "annotated":
            stats.n_annotated += 1
            stats.annotated_duration_s += duration
            final = get(sample, "final_text")
            if final is not None and final != get(sample, "original_text"):
                stats.n_edited += 1
        elif status == "discarded":
            stats.n_discarded += 1
            for reason in get(sample, "discard_reasons", None) or []:
                key = reason.value if isinstance(reason, DiscardReason) else str(reason)
                stats.discard_reasons[key] = stats.discard_reasons.get(key, 0) + 1
        elif status == "locked":
            stats.n_locked += 1
        else:
            stats.n_pending += 1

    if stats.n_samples:
        stats.percent_annotated = 100.0 * stats.n_annotated / stats.n_samples
        stats.percent_edited = 100.0 * stats.n_edited / stats.n_samples
        stats.percent_discarded = 100.0 * stats.n_discarded / stats.n_samples
    return stats


def format_stats_table(rows: list[tuple[str, DatasetStats]]) -> str:
    """Aligned text table in the dataset-summary layout for human review."""
    header = (
        "Dataset",
        "# Samples",
        "Bad Prosody",
        "Inconsistent Text-Audio",
        "Truncation",
        "Sound Artifacts",
        "% Edited",
        "% Discarded",
    )
    body = []
    for name, stats in rows:
        reasons = stats.discard_reasons
        body.append(
            (
                name,
                str(stats.n_samples),
                str(reasons.get("bad_prosody", 0)),
                str(reasons.get("text_audio_inconsistency", 0)),
                str(reasons.get("truncation", 0)),
                str(reasons.get("sound_artifact", 0)),
                f"{stats.percent_edited:.2f}%",
                f"{stats.percent_discarded:.2f}%",
            )
        )
    widths = [
        max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
        for i in range(len(header))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(row)))
    return "\n".join(lines)


def format_assignment_table(rows: list[tuple[str, str, dict]]) -> str:
    """Aligned text table mirroring the matching-report layout."""
    header = (
        "Lang",
        "File",
        "Dur. Before Match.",
        "Dur. After Match.",
        "Dur. After Trim.",
        "Total Files",
        "Assigned",
        "Not Assigned",
        "% Assigned",
    )
    body = []
    for lang, name, rec in rows:
        body.append(
            (
                lang,
                name,
                f"{rec['duration_before_match_s']:.2f}",
                f"{rec['duration_after_match_s']:.2f}",
                f"{rec['duration_after_trim_s']:.2f}",
                str(rec["total_segments"]),
                str(rec["assigned"]),
                str(rec["not_assigned"]),
                f"{100.0 * rec['percent_assigned']:.1f}%",
            )
        )
    widths = [
        max(len(header[i]), *(len(r[i]) for r in body)) if body else len(header[i])
        for i in range(len(header))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for row in body:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(row)))
    return "\n".join(lines)
