"""Synthetic batch-recording generator for desk-scale pipeline runs.

Each script sentence becomes one tone burst whose duration follows the
sentence's word count at the reference speaking rate and whose frequency is
a deterministic function of its position, so the audio itself identifies the
utterance the truth sidecar claims it is. A low noise floor keeps the VAD
percentile meaningful; the tone peak sits inside the required level window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, write_wav
from .corpus import Sentence
from .errors import DataError


@dataclass
class SyntheticBatch:
    wav_path: Path
    truth_path: Path
    utterance_spans: list[tuple[int, int]]  # sample spans of the tone bursts
    sample_rate: int
    total_duration_s: float


def make_tone(
    duration_s: float,
    sample_rate: int,
    freq_hz: float,
    peak_db: float,
    ramp_ms: float = 10.0,
) -> np.ndarray:
    """Sine burst with raised-cosine edges, peak at ``peak_db`` dBFS."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    amp = (10.0 ** (peak_db / 20.0)) * 32767.0
    wave = amp * np.sin(2.0 * math.pi * freq_hz * t)
    ramp = max(1, int(ramp_ms * sample_rate / 1000.0))
    if 2 * ramp < n:
        window = 0.5 * (1.0 - np.cos(np.linspace(0.0, math.pi, ramp)))
        wave[:ramp] *= window
        wave[-ramp:] *= window[::-1]
    return wave


def synth_batch(
    sentences: list[Sentence],
    wav_path,
    truth_path,
    *,
    gap_s: float = 2.5,
    sample_rate: int = 88_000,
    seed: int = 42,
    peak_db: float = -4.5,
    noise_db: float = -66.0,
    words_per_second: float = 2.75,
) -> SyntheticBatch:
    """Render one batch WAV plus its ``index<TAB>text`` truth table."""
    if not sentences:
        raise DataError("cannot synthesize an empty batch")
    if gap_s <= 0:
        raise DataError("gap_s must be positive")
    wav_path, truth_path = Path(wav_path), Path(truth_path)

    durations = [max(0.4, s.word_count / words_per_second) for s in sentences]
    gap = int(round(gap_s * sample_rate))
    total = gap + sum(int(round(d * sample_rate)) + gap for d in durations)

    rng = np.random.default_rng(seed)
    noise_rms = (10.0 ** (noise_db / 20.0)) * 32768.0
    signal = rng.normal(0.0, noise_rms, size=total)

    spans: list[tuple[int, int]] = []
    cursor = gap
    for i, (sentence, duration) in enumerate(zip(sentences, durations)):
        freq = 180.0 + 17.0 * (i % 97)
        tone = make_tone(duration, sample_rate, freq, peak_db)
        signal[cursor : cursor + len(tone)] += tone
        spans.append((cursor, cursor + len(tone)))
        cursor += len(tone) + gap

    samples = np.clip(np.round(signal), -32768, 32767).astype(np.int16)
    write_wav(AudioBuffer(samples, sample_rate), wav_path)

    with open(truth_path, "w", encoding="utf-8") as fh:
        for i, sentence in enumerate(sentences):
            fh.write(f"{i}\t{sentence.text}\n")

    return SyntheticBatch(
        wav_path=wav_path,
        truth_path=truth_path,
        utterance_spans=spans,
        sample_rate=sample_rate,
        total_duration_s=total / sample_rate,
    )


def synth_utterance(
    duration_s: float,
    sample_rate: int = 88_000,
    *,
    peak_db: float = -4.5,
    freq_hz: float = 440.0,
    lead_silence_ms: float = 80.0,
    trail_silence_ms: float = 80.0,
    noise_db: float = -66.0,
    internal_gap_at_s: float | None = None,
    internal_gap_s: float = 0.0,
    seed: int = 7,
) -> AudioBuffer:
    """Single-utterance fixture: silence, tone (optionally split by an
    internal gap), silence, over a continuous noise floor."""
    lead = int(lead_silence_ms * sample_rate / 1000.0)
    tail = int(trail_silence_ms * sample_rate / 1000.0)
    tone = make_tone(duration_s, sample_rate, freq_hz, peak_db)
    if internal_gap_at_s is not None and internal_gap_s > 0:
        at = int(internal_gap_at_s * sample_rate)
        gap = np.zeros(int(internal_gap_s * sample_rate))
        tone = np.concatenate([tone[:at], gap, tone[at:]])
    rng = np.random.default_rng(seed)
    noise_rms = (10.0 ** (noise_db / 20.0)) * 32768.0
    signal = np.concatenate([np.zeros(lead), tone, np.zeros(tail)])
    signal += rng.normal(0.0, noise_rms, size=len(signal))
    samples = np.clip(np.round(signal), -32768, 32767).astype(np.int16)
    return AudioBuffer(samples, sample_rate)
