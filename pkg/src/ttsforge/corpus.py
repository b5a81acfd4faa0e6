"""Raw-corpus ingestion and sentence filtering for recording scripts.

A candidate line survives filtering only if it reads cleanly for a voice
actor: a single sentence of 5..13 words, no digits, no abbreviations or
acronyms, no stray symbols, ending in exactly one of ``.``, ``?``, ``!``.
Rejections carry the first failed rule so corpus statistics stay reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import CorpusDecodeError, DataError


class SentenceType(str, Enum):
    DECLARATIVE = "declarative"
    INTERROGATIVE = "interrogative"
    EXCLAMATORY = "exclamatory"


# Fullwidth CJK terminals map to the same three types as their ASCII forms.
_TERMINALS = {
    ".": SentenceType.DECLARATIVE,
    "。": SentenceType.DECLARATIVE,
    "?": SentenceType.INTERROGATIVE,
    "？": SentenceType.INTERROGATIVE,
    "!": SentenceType.EXCLAMATORY,
    "！": SentenceType.EXCLAMATORY,
}

_ALLOWED_BODY_EXTRA = set(" ,'-’‐–")

_CJK_LANGS = {"zh", "cmn", "yue", "ja"}


@dataclass(frozen=True)
class Sentence:
    """One accepted script line."""

    id: str
    text: str
    language: str
    sentence_type: SentenceType
    word_count: int

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "language": self.language,
            "sentence_type": self.sentence_type.value,
            "word_count": self.word_count,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Sentence":
        return cls(
            id=record["id"],
            text=record["text"],
            language=record["language"],
            sentence_type=SentenceType(record["sentence_type"]),
            word_count=int(record["word_count"]),
        )


@dataclass(frozen=True)
class Rejection:
    """Why a candidate line was dropped; ``reason`` is the first failed rule."""

    reason: str
    detail: str = ""


@dataclass
class CorpusFilterConfig:
    min_words: int = 5
    max_words: int = 13
    abbreviation_lexicon: set[str] = field(default_factory=set)
    reject_all_caps_len: int = 2

    def __post_init__(self):
        if self.min_words < 1 or self.min_words > self.max_words:
            raise DataError(
                f"bad word bounds: min={self.min_words} max={self.max_words}"
            )
        self.abbreviation_lexicon = {t.casefold() for t in self.abbreviation_lexicon}


def load_corpus(path, language: str = "") -> Iterator[str]:
    """Yield stripped candidate lines from a UTF-8 file, skipping blanks.

    Raises CorpusDecodeError naming the first line that is not valid UTF-8.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise CorpusDecodeError(path, lineno) from None
            if lineno == 1:
                line = line.lstrip("﻿")
            line = line.strip()
            if line:
                yield line


def classify_sentence_type(text: str) -> SentenceType | Rejection:
    """Classify by the last non-whitespace character; anything else rejects."""
    stripped = text.rstrip()
    if not stripped:
        return Rejection("bad_terminal", "empty text")
    mark = stripped[-1]
    stype = _TERMINALS.get(mark)
    if stype is None:
        return Rejection("bad_terminal", f"ends with {mark!r}")
    return stype


def count_words(text: str, language: str = "") -> int:
    """Count words: whitespace tokens minus punctuation-only tokens, or
    non-punctuation characters for CJK languages."""
    primary = language.split("-")[0].lower() if language else ""
    if primary in _CJK_LANGS:
        return sum(1 for ch in text if ch.isalpha())
    count = 0
    for token in text.split():
        if any(ch.isalnum() for ch in token):
            count += 1
    return count


def _tokens(text: str) -> list[str]:
    return text.split()


def _strip_edge_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and not token[start].isalnum():
        start += 1
    while end > start and not token[end - 1].isalnum():
        end -= 1
    return token[start:end]


def filter_sentence(
    text: str, cfg: CorpusFilterConfig, language: str = ""
) -> Sentence | Rejection:
    """Apply the fixed rule chain: type, length, digit, abbreviation,
    acronym, charset. Returns a Sentence (id left blank) or the first
    rejection."""
    text = text.strip()
    stype = classify_sentence_type(text)
    if isinstance(stype, Rejection):
        return stype

    words = count_words(text, language)
    if words < cfg.min_words:
        return Rejection("too_few_words", f"{words} < {cfg.min_words}")
    if words > cfg.max_words:
        return Rejection("too_many_words", f"{words} > {cfg.max_words}")

    if any(ch.isdigit() for ch in text):
        return Rejection("contains_digit")

    for token in _tokens(text):
        bare = token.rstrip(",")
        if (
            bare.casefold() in cfg.abbreviation_lexicon
            or _strip_edge_punct(token).casefold() in cfg.abbreviation_lexicon
        ):
            return Rejection("abbreviation", token)

    for token in _tokens(text):
        core = _strip_edge_punct(token)
        if (
            len(core) >= cfg.reject_all_caps_len
            and core.isalpha()
            and core.isupper()
        ):
            return Rejection("acronym", token)

    body = text.rstrip()[:-1]
    for ch in body:
        if not (ch.isalpha() or ch in _ALLOWED_BODY_EXTRA):
            return Rejection("charset", repr(ch))

    return Sentence(
        id="",
        text=text,
        language=language,
        sentence_type=stype,
        word_count=words,
    )


def filter_corpus(
    lines: Iterable[str], cfg: CorpusFilterConfig, language: str = ""
) -> tuple[list[Sentence], list[tuple[str, Rejection]]]:
    """Filter a whole corpus; returns (accepted, [(line, rejection), ...])."""
    accepted: list[Sentence] = []
    rejected: list[tuple[str, Rejection]] = []
    for line in lines:
        result = filter_sentence(line, cfg, language)
        if isinstance(result, Rejection):
            rejected.append((line, result))
        else:
            accepted.append(result)
    return accepted, rejected


def write_script(records: Iterable[dict], path) -> None:
    """Write line-delimited script records (one JSON object per line)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_script(path) -> list[dict]:
    """Read line-delimited script records, skipping blank lines."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_abbreviation_lexicon(path) -> set[str]:
    """One abbreviation token per line; ``#`` starts a comment."""
    entries: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                entries.add(line)
    return entries
