"""Mono 16-bit PCM WAV handling, level metrics, and energy-based VAD.

All detection is frame-energy based: frame RMS in dBFS on 25 ms windows at a
10 ms hop, a percentile noise floor, and a fixed dB margin. Frames are also
speech when they clear an absolute floor (``speech_floor_db``); the
percentile floor alone degenerates on buffers that are mostly or entirely
speech, e.g. already-trimmed single-utterance files.

Everything is pure over immutable buffers; batch-scale callers construct a
``VadAnalysis`` once per buffer and derive regions, trims and silence
measurements from the same frame mask.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    NoSpeechError,
    UndefinedSnrError,
    UnsupportedFormatError,
    WavParseError,
)

FULL_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray  # int16, shape (n,)
    sample_rate: int
    channel_count: int = 1

    def __post_init__(self):
        if self.channel_count != 1:
            raise UnsupportedFormatError("channels", self.channel_count)
        if self.sample_rate <= 0:
            raise DataError(f"bad sample rate {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.int16)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice(self, start: int, end: int) -> "AudioBuffer":
        return AudioBuffer(self.samples[start:end], self.sample_rate)


@dataclass(frozen=True)
class SpeechRegion:
    start_sample: int
    end_sample: int  # exclusive

    def __post_init__(self):
        if not (0 <= self.start_sample < self.end_sample):
            raise DataError(
                f"bad region [{self.start_sample}, {self.end_sample})"
            )

    def duration_s(self, sample_rate: int) -> float:
        return (self.end_sample - self.start_sample) / sample_rate


@dataclass
class VadConfig:
    frame_ms: int = 25
    hop_ms: int = 10
    noise_percentile: float = 0.10
    threshold_db_above_noise: float = 12.0
    hangover_frames: int = 5
    min_region_ms: int = 150
    speech_floor_db: float = -40.0

    def __post_init__(self):
        if not (self.frame_ms >= self.hop_ms > 0):
            raise DataError("frame_ms must be >= hop_ms > 0")
        if not (0.0 < self.noise_percentile < 1.0):
            raise DataError("noise_percentile must be in (0, 1)")
        if self.threshold_db_above_noise <= 0:
            raise DataError("threshold_db_above_noise must be positive")


@dataclass
class TrimConfig:
    max_edge_silence_ms: int = 100
    min_padding_ms: int = 25

    def __post_init__(self):
        if not (0 <= self.min_padding_ms < self.max_edge_silence_ms):
            raise DataError("need 0 <= min_padding_ms < max_edge_silence_ms")


def read_wav(path) -> AudioBuffer:
    """Parse a RIFF/WAVE file, skipping unknown chunks.

    Only PCM, mono, 16-bit content yields a buffer; other well-formed files
    raise UnsupportedFormatError naming the violated criterion. Structural
    damage raises WavParseError with the byte offset.
    """
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavParseError("file shorter than RIFF header", len(data))
    if data[0:4] != b"RIFF":
        raise WavParseError("missing RIFF magic", 0)
    if data[8:12] != b"WAVE":
        raise WavParseError("missing WAVE form type", 8)

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise WavParseError(
                f"chunk {chunk_id!r} overruns file (declares {size} bytes)", pos
            )
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavParseError("fmt chunk too short", pos)
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            payload = data[body_start : body_start + size]
        pos = body_start + size + (size & 1)
    if pos != len(data) and payload is None:
        raise WavParseError("trailing garbage before any data chunk", pos)
    if fmt is None:
        raise WavParseError("no fmt chunk", len(data))
    if payload is None:
        raise WavParseError("no data chunk", len(data))

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedFormatError("sample_format", audio_format)
    if channels != 1:
        raise UnsupportedFormatError("channel_count", channels)
    if bits != 16:
        raise UnsupportedFormatError("bit_depth", bits)
    if len(payload) % 2:
        raise WavParseError("data chunk has odd byte length", len(data))
    samples = np.frombuffer(payload, dtype="<i2").astype(np.int16)
    return AudioBuffer(samples, sample_rate)


def write_wav(buf: AudioBuffer, path) -> None:
    """Write a canonical 44-byte-header PCM WAV; round-trips bit-exactly."""
    body = buf.samples.astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(body),
        b"WAVE",
        b"fmt ",
        16,
        1,
        1,
        buf.sample_rate,
        buf.sample_rate * 2,
        2,
        16,
        b"data",
        len(body),
    )
    Path(path).write_bytes(header + body)


def peak_dbfs(buf: AudioBuffer) -> float:
    """Peak level in dBFS; digital silence reads -inf."""
    if len(buf) == 0:
        raise DataError("peak of empty buffer")
    peak = int(np.max(np.abs(buf.samples.astype(np.int32))))
    if peak == 0:
        return float("-inf")
    return 20.0 * math.log10(peak / FULL_SCALE)


def _frame_mean_square(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = len(samples)
    if n < frame_len:
        return np.empty(0, dtype=np.float64)
    n_frames = 1 + (n - frame_len) // hop
    out = np.empty(n_frames, dtype=np.float64)
    chunk = max(1, 4_000_000 // hop)
    for f0 in range(0, n_frames, chunk):
        f1 = min(f0 + chunk, n_frames)
        s0 = f0 * hop
        s1 = (f1 - 1) * hop + frame_len
        x = samples[s0:s1].astype(np.float64)
        csq = np.concatenate(([0.0], np.cumsum(x * x)))
        starts = (np.arange(f0, f1) - f0) * hop
        out[f0:f1] = csq[starts + frame_len] - csq[starts]
    return out / frame_len


class VadAnalysis:
    """Frame energies, speech mask and derived measurements for one buffer."""

    def __init__(self, buf: AudioBuffer, cfg: VadConfig | None = None):
        self.buf = buf
        self.cfg = cfg or VadConfig()
        rate = buf.sample_rate
        self.frame_len = max(1, rate * self.cfg.frame_ms // 1000)
        self.hop = max(1, rate * self.cfg.hop_ms // 1000)
        mean_sq = _frame_mean_square(buf.samples, self.frame_len, self.hop)
        with np.errstate(divide="ignore"):
            self.frame_db = 10.0 * np.log10(mean_sq / (FULL_SCALE * FULL_SCALE))
        self.mask = self._speech_mask()

    def _speech_mask(self) -> np.ndarray:
        db = self.frame_db
        if len(db) == 0:
            return np.zeros(0, dtype=bool)
        # order statistic, not interpolation: -inf frames (digital silence)
        # would otherwise produce NaN
        floor = float(np.quantile(db, self.cfg.noise_percentile, method="lower"))
        threshold = min(floor + self.cfg.threshold_db_above_noise, self.cfg.speech_floor_db)
        raw = db > threshold
        if self.cfg.hangover_frames > 0 and raw.any():
            idx = np.arange(len(raw), dtype=np.float64)
            last_true = np.maximum.accumulate(np.where(raw, idx, -np.inf))
            raw = (idx - last_true) <= self.cfg.hangover_frames
        return raw

    def _frame_span(self, frame: int) -> tuple[int, int]:
        start = frame * self.hop
        return start, min(start + self.frame_len, len(self.buf))

    def regions(self) -> list[SpeechRegion]:
        """Sorted, non-overlapping speech regions, short blips dropped."""
        mask = self.mask
        if not mask.any():
            return []
        edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
        min_len = self.cfg.min_region_ms * self.buf.sample_rate // 1000
        spans: list[list[int]] = []
        for run_start, run_end in zip(edges[0::2], edges[1::2]):
            start = int(run_start) * self.hop
            end = min((int(run_end) - 1) * self.hop + self.frame_len, len(self.buf))
            if spans and start <= spans[-1][1]:
                spans[-1][1] = max(spans[-1][1], end)
            else:
                spans.append([start, end])
        return [
            SpeechRegion(s, e) for s, e in spans if e - s >= min_len
        ]

    def _region_frames(self, region: SpeechRegion) -> tuple[int, int]:
        """Frame index range [lo, hi) of frames overlapping the region."""
        lo = max(0, (region.start_sample - self.frame_len) // self.hop + 1)
        hi = min(len(self.mask), -(-region.end_sample // self.hop))
        return int(lo), max(int(lo), int(hi))

    def speech_bounds(self, region: SpeechRegion) -> tuple[int, int] | None:
        """Sample bounds of detected speech inside the region, or None."""
        lo, hi = self._region_frames(region)
        frames = np.flatnonzero(self.mask[lo:hi]) + lo
        if frames.size == 0:
            return None
        first_start, _ = self._frame_span(int(frames[0]))
        _, last_end = self._frame_span(int(frames[-1]))
        return (
            max(region.start_sample, first_start),
            min(region.end_sample, last_end),
        )

    def trim(self, region: SpeechRegion, trim_cfg: TrimConfig) -> SpeechRegion:
        bounds = self.speech_bounds(region)
        if bounds is None:
            raise NoSpeechError(
                f"no speech frames in [{region.start_sample}, {region.end_sample})"
            )
        speech_start, speech_end = bounds
        rate = self.buf.sample_rate
        # aim for the middle of the allowed window, not its ceiling, so the
        # frame-quantized downstream measurement keeps margin on both sides
        keep_ms = (trim_cfg.min_padding_ms + trim_cfg.max_edge_silence_ms) // 2
        keep = keep_ms * rate // 1000
        lead = min(speech_start - region.start_sample, keep)
        tail = min(region.end_sample - speech_end, keep)
        return SpeechRegion(speech_start - lead, speech_end + tail)

    def max_internal_silence_s(self, region: SpeechRegion) -> float:
        lo, hi = self._region_frames(region)
        frames = self.mask[lo:hi]
        speech = np.flatnonzero(frames)
        if speech.size < 2:
            return 0.0
        inner = frames[speech[0] : speech[-1] + 1]
        gaps = np.flatnonzero(np.diff(np.concatenate(([1], inner.view(np.int8), [1]))))
        longest = 0
        for a, b in zip(gaps[0::2], gaps[1::2]):
            longest = max(longest, int(b - a))
        if longest == 0:
            return 0.0
        span = (longest - 1) * self.hop + self.frame_len
        return span / self.buf.sample_rate


def detect_speech_regions(buf: AudioBuffer, cfg: VadConfig | None = None) -> list[SpeechRegion]:
    return VadAnalysis(buf, cfg).regions()


def group_by_gap(
    regions: list[SpeechRegion], min_gap_s: float = 2.0, *, sample_rate: int
) -> list[SpeechRegion]:
    """Merge regions separated by less than ``min_gap_s`` of silence, so each
    output region is one sentence reading. Idempotent."""
    if not regions:
        return []
    gap_samples = int(min_gap_s * sample_rate)
    merged = [[regions[0].start_sample, regions[0].end_sample]]
    for region in regions[1:]:
        if region.start_sample - merged[-1][1] < gap_samples:
            merged[-1][1] = max(merged[-1][1], region.end_sample)
        else:
            merged.append([region.start_sample, region.end_sample])
    return [SpeechRegion(s, e) for s, e in merged]


def trim_silence(
    buf: AudioBuffer,
    region: SpeechRegion,
    vad: VadConfig | None = None,
    trim: TrimConfig | None = None,
) -> SpeechRegion:
    """Shrink a region so each edge keeps at most ``max_edge_silence_ms`` of
    silence; shorter available silence is kept in full (edges never move
    outward, speech is never cut)."""
    return VadAnalysis(buf, vad).trim(region, trim or TrimConfig())


def max_internal_silence(
    buf: AudioBuffer, region: SpeechRegion, vad: VadConfig | None = None
) -> float:
    """Longest silent stretch (seconds) strictly inside the region's speech."""
    return VadAnalysis(buf, vad).max_internal_silence_s(region)


def estimate_snr(buf: AudioBuffer, regions: list[SpeechRegion]) -> float:
    """Speech-to-noise RMS ratio in dB over the given speech regions."""
    if not regions:
        raise UndefinedSnrError("no speech regions")
    mask = np.zeros(len(buf), dtype=bool)
    for region in regions:
        mask[region.start_sample : region.end_sample] = True
    speech = buf.samples[mask].astype(np.float64)
    noise = buf.samples[~mask].astype(np.float64)
    if noise.size == 0:
        raise UndefinedSnrError("no non-speech samples")
    speech_rms = float(np.sqrt(np.mean(speech * speech)))
    noise_rms = float(np.sqrt(np.mean(noise * noise)))
    if noise_rms == 0.0:
        return float("inf")
    if speech_rms == 0.0:
        return float("-inf")
    return 20.0 * math.log10(speech_rms / noise_rms)
