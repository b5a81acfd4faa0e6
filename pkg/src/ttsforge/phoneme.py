"""Phonemization and phonetic n-gram bookkeeping.

Sentences become sequences of opaque phoneme symbols, then count
distributions over contiguous n-grams of order 1..3 (keys are namespaced by
order so all three live in one distribution). Alignment of a selected subset
against the corpus is measured with Jensen-Shannon divergence, natural log,
so the score is symmetric and bounded by ln 2 even for disjoint supports.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError, PhonemizerError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PhonemeSequence:
    phonemes: tuple[str, ...]
    source_sentence_id: str = ""

    def __len__(self) -> int:
        return len(self.phonemes)


@dataclass
class NGramDistribution:
    """Counts over n-gram keys plus their sum; counts never go negative."""

    counts: dict[str, int] = field(default_factory=dict)
    total: int = 0

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "NGramDistribution":
        return cls(counts=dict(counts), total=sum(counts.values()))

    def normalized(self) -> dict[str, float]:
        if self.total == 0:
            return {}
        return {k: c / self.total for k, c in self.counts.items()}

    def copy(self) -> "NGramDistribution":
        return NGramDistribution(dict(self.counts), self.total)


class PhonemizerKind(str, Enum):
    LEXICON = "lexicon"
    EXTERNAL_COMMAND = "external_command"
    GRAPHEME_FALLBACK = "grapheme_fallback"


@dataclass
class PhonemizerSpec:
    kind: PhonemizerKind = PhonemizerKind.GRAPHEME_FALLBACK
    lexicon_path: Path | None = None
    command_template: str | None = None

    def __post_init__(self):
        self.kind = PhonemizerKind(self.kind)
        if self.kind is PhonemizerKind.LEXICON and not self.lexicon_path:
            raise ConfigError("lexicon phonemizer requires lexicon_path")
        if self.kind is PhonemizerKind.EXTERNAL_COMMAND and not self.command_template:
            raise ConfigError("external phonemizer requires command_template")


def _grapheme_phonemes(text: str) -> list[str]:
    return [ch.lower() for ch in text if ch.isalpha()]


def load_lexicon(path) -> dict[str, tuple[str, ...]]:
    """Parse ``word<TAB>phoneme phoneme ...`` lines; ``#`` starts a comment."""
    table: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].rstrip()
            if not line:
                continue
            word, _, rest = line.partition("\t")
            phones = tuple(rest.split())
            if word and phones:
                table[word.casefold()] = phones
    return table


class Phonemizer:
    """Maps text to phoneme sequences per a PhonemizerSpec.

    Lexicon lookups fall through to the grapheme fallback for
    out-of-vocabulary words. The external command is invoked once per batch
    with one sentence per stdin line and must answer with exactly one
    space-separated phoneme line per input line.
    """

    def __init__(self, spec: PhonemizerSpec, language: str = ""):
        self.spec = spec
        self.language = language
        self._lexicon: dict[str, tuple[str, ...]] = {}
        if spec.kind is PhonemizerKind.LEXICON:
            self._lexicon = load_lexicon(spec.lexicon_path)

    def phonemize(self, text: str, sentence_id: str = "") -> PhonemeSequence:
        return self.phonemize_batch([text], [sentence_id])[0]

    def phonemize_batch(
        self, texts: Sequence[str], sentence_ids: Sequence[str] | None = None
    ) -> list[PhonemeSequence]:
        ids = list(sentence_ids) if sentence_ids is not None else [""] * len(texts)
        if len(ids) != len(texts):
            raise DataError("sentence_ids length does not match texts")
        if self.spec.kind is PhonemizerKind.EXTERNAL_COMMAND:
            phoneme_lines = self._run_external(texts)
            return [
                PhonemeSequence(tuple(line.split()), sid)
                for line, sid in zip(phoneme_lines, ids)
            ]
        out = []
        for text, sid in zip(texts, ids):
            if self.spec.kind is PhonemizerKind.LEXICON:
                phones: list[str] = []
                for token in text.split():
                    word = token.strip("'’-,.?!\"();:").casefold()
                    if not word:
                        continue
                    entry = self._lexicon.get(word)
                    if entry is not None:
                        phones.extend(entry)
                    else:
                        phones.extend(_grapheme_phonemes(word))
            else:
                phones = _grapheme_phonemes(text)
            out.append(PhonemeSequence(tuple(phones), sid))
        return out

    def _run_external(self, texts: Sequence[str]) -> list[str]:
        command = shlex.split(self.spec.command_template.format(lang=self.language))
        try:
            proc = subprocess.run(
                command,
                input="\n".join(texts) + "\n",
                capture_output=True,
                text=True,
                timeout=600,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise PhonemizerError(f"phonemizer command failed: {exc}") from exc
        if proc.returncode != 0:
            raise PhonemizerError(
                f"phonemizer exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        lines = proc.stdout.splitlines()
        if len(lines) != len(texts):
            raise PhonemizerError(
                f"phonemizer returned {len(lines)} lines for {len(texts)} inputs"
            )
        return lines


def phonemize(
    text: str, spec: PhonemizerSpec, language: str = ""
) -> PhonemeSequence:
    return Phonemizer(spec, language).phonemize(text)


def extract_ngrams(
    seq: PhonemeSequence, orders: Iterable[int] = (1, 2, 3)
) -> NGramDistribution:
    """Count contiguous n-grams of the requested orders; keys look like
    ``2:a b``. A sequence of length L yields max(0, L-n+1) grams of order n."""
    counts: Counter[str] = Counter()
    phones = seq.phonemes
    for n in sorted(set(orders)):
        if n not in (1, 2, 3):
            raise DataError(f"unsupported n-gram order {n}")
        prefix = f"{n}:"
        for i in range(len(phones) - n + 1):
            counts[prefix + " ".join(phones[i : i + n])] += 1
    return NGramDistribution.from_counts(counts)


def merge(d1: NGramDistribution, d2: NGramDistribution) -> NGramDistribution:
    """Pointwise count addition; commutative and associative."""
    counts = dict(d1.counts)
    for key, c in d2.counts.items():
        counts[key] = counts.get(key, 0) + c
    return NGramDistribution(counts, d1.total + d2.total)


def divergence(p: NGramDistribution, q: NGramDistribution) -> float:
    """Jensen-Shannon divergence (natural log) between normalized p and q.

    Returns a value in [0, ln 2]. An empty p against a non-empty reference
    scores ln 2 by convention; an empty reference q is an error.
    """
    if q.total <= 0:
        raise DataError("divergence reference distribution is empty")
    if p.total <= 0:
        return LN2
    acc = 0.0
    pt, qt = p.total, q.total
    for key in p.counts.keys() | q.counts.keys():
        pk = p.counts.get(key, 0) / pt
        qk = q.counts.get(key, 0) / qt
        mk = 0.5 * (pk + qk)
        if pk > 0.0:
            acc += 0.5 * pk * math.log(pk / mk)
        if qk > 0.0:
            acc += 0.5 * qk * math.log(qk / mk)
    return min(max(acc, 0.0), LN2)
