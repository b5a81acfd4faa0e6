"""Shared fixtures: synthetic text corpora, independent metric oracles, and
the kill-and-replay crash harness used by both the store and acceptance
suites."""

from __future__ import annotations

import json
import math
import os
import random
import signal
import subprocess
import sys
from functools import lru_cache
from pathlib import Path

from ttsforge.corpus import Sentence, SentenceType
from ttsforge.store import Store

_TERMINAL_TO_TYPE = {
    ".": SentenceType.DECLARATIVE,
    "?": SentenceType.INTERROGATIVE,
    "!": SentenceType.EXCLAMATORY,
}


def make_vocabulary(seed: int, size: int = 600, letters: str = "abcdefghijklmn") -> list[str]:
    """Three-letter words over a Zipf-skewed alphabet; rare letters appear in
    few words, so random subsets under-cover the tail of the distribution."""
    rng = random.Random(seed)
    weights = [1.0 / (i + 1) for i in range(len(letters))]
    vocab = set()
    while len(vocab) < size:
        vocab.add("".join(rng.choices(letters, weights=weights, k=3)))
    return sorted(vocab)


def make_corpus_sentences(
    n: int,
    seed: int = 0,
    language: str = "de",
    vocab: list[str] | None = None,
    id_prefix: str | None = None,
) -> list[Sentence]:
    """Synthetic filtered sentences: 5..13 words, ~80/12/8 type mix."""
    rng = random.Random(seed)
    vocab = vocab or make_vocabulary(seed + 1)
    sentences = []
    for i in range(n):
        k = rng.randint(5, 13)
        words = rng.choices(vocab, k=k)
        draw = rng.random()
        terminal = "." if draw < 0.80 else ("?" if draw < 0.92 else "!")
        text = " ".join(words).capitalize() + terminal
        sid = f"{id_prefix}{i + 1:08d}" if id_prefix else ""
        sentences.append(
            Sentence(
                id=sid,
                text=text,
                language=language,
                sentence_type=_TERMINAL_TO_TYPE[terminal],
                word_count=k,
            )
        )
    return sentences


def write_corpus_file(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(s.text + "\n")


def jsd_entropy_oracle(p_counts: dict, q_counts: dict) -> float:
    """JSD via the entropy identity H(M) - (H(P)+H(Q))/2 (natural log);
    algebraically independent of the production per-key KL sum."""
    pt, qt = sum(p_counts.values()), sum(q_counts.values())
    pn = {k: v / pt for k, v in p_counts.items() if v}
    qn = {k: v / qt for k, v in q_counts.items() if v}
    keys = set(pn) | set(qn)
    m = {k: 0.5 * (pn.get(k, 0.0) + qn.get(k, 0.0)) for k in keys}

    def entropy(dist):
        return -sum(v * math.log(v) for v in dist.values() if v > 0)

    return entropy(m) - 0.5 * (entropy(pn) + entropy(qn))


def levenshtein_recursive(a: str, b: str) -> int:
    """The textbook recursive definition (memoized), used as the oracle."""

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1)
        return 1 + min(rec(i - 1, j), rec(i, j - 1), rec(i - 1, j - 1))

    return rec(len(a), len(b))


def _legal_step(before: dict | None, after_status: str) -> bool:
    """One in-flight op may advance a single sample by one legal transition."""
    if before is None:
        return after_status == "pending"  # in-flight add
    return (before["status"], after_status) in {
        ("pending", "locked"),
        ("locked", "pending"),
        ("locked", "annotated"),
        ("locked", "discarded"),
    }


def crash_trial(root: Path, seed: int, n_ops: int = 1000) -> int:
    """Spawn the randomized-ops worker, SIGKILL it mid-run, reload the store
    and verify every receipted operation survived with invariants intact.
    Returns the number of committed receipts verified."""
    root = Path(root)
    setup = Store(root)
    setup.create_dataset("crash", "de")
    setup.close()

    worker = Path(__file__).parent / "crash_worker.py"
    proc = subprocess.Popen(
        [sys.executable, str(worker), str(root), str(seed), str(n_ops)],
        stdout=subprocess.PIPE,
        text=True,
    )
    kill_after = 120 + (seed % 400)
    receipts = []
    for line in proc.stdout:
        receipts.append(json.loads(line))
        if len(receipts) >= kill_after:
            os.kill(proc.pid, signal.SIGKILL)
            break
    proc.wait()
    # receipts already flushed into the pipe before the kill are committed
    # operations too: drain them (a torn final line is the op in flight)
    for line in proc.stdout:
        try:
            receipts.append(json.loads(line))
        except json.JSONDecodeError:
            break
    assert len(receipts) >= 100, "worker died before producing enough receipts"

    model: dict[str, dict] = {}
    annotations: dict[str, dict] = {}
    for receipt in receipts:
        op = receipt["op"]
        if op == "add":
            model[receipt["sample_id"]] = {
                "status": "pending",
                "final_text": None,
                "reasons": [],
                "wer": receipt["wer"],
                "original_text": receipt["original_text"],
                "duration_s": receipt["duration_s"],
            }
        elif op == "acquire" and receipt.get("sample_id"):
            model[receipt["sample_id"]]["status"] = "locked"
        elif op == "release":
            model[receipt["sample_id"]]["status"] = "pending"
        elif op == "submit":
            entry = model[receipt["sample_id"]]
            entry["status"] = "annotated" if receipt["action"] == "approve" else "discarded"
            entry["final_text"] = receipt["final_text"]
            entry["reasons"] = receipt["reasons"]
            annotations[receipt["sample_id"]] = receipt

    reloaded = Store(root)
    dataset_id = reloaded.list_datasets()[0].id
    loaded = {s.id: s for s in reloaded.samples(dataset_id)}

    # every committed operation is present; at most one in-flight op extra
    anomalies = 0
    extra_ids = set(loaded) - set(model)
    anomalies += len(extra_ids)
    for sample_id in extra_ids:
        assert _legal_step(None, loaded[sample_id].status)
    assert set(model) <= set(loaded), "a committed sample is missing"
    for sample_id, expected in model.items():
        actual = loaded[sample_id]
        assert actual.wer == expected["wer"]
        assert actual.original_text == expected["original_text"]
        assert actual.duration_s == expected["duration_s"]
        matches = (
            actual.status == expected["status"]
            and (actual.final_text or None) == (expected["final_text"] or None)
            and list(actual.discard_reasons) == list(expected["reasons"])
        )
        if not matches:
            anomalies += 1
            assert _legal_step(expected, actual.status), (
                f"{sample_id}: {expected['status']} -> {actual.status} is not one step"
            )
    assert anomalies <= 1, f"more than one in-flight difference: {anomalies}"

    # committed annotations are intact and immutable
    for sample_id, receipt in annotations.items():
        stored = reloaded.annotation(sample_id)
        assert stored is not None
        assert stored.action == receipt["action"]
        assert stored.final_text == receipt["final_text"]
        assert list(stored.discard_reasons) == receipt["reasons"]

    # state-machine invariants hold for every loaded sample
    for sample in loaded.values():
        assert sample.status in ("pending", "locked", "annotated", "discarded")
        assert (sample.status == "locked") == (sample.lock_annotator is not None)
        if sample.status in ("annotated", "discarded"):
            assert reloaded.annotation(sample.id) is not None

    # replay determinism: a second load yields the same state
    reloaded.close()
    again = Store(root)
    assert {s.id: s.to_record() for s in again.samples(dataset_id)} == {
        k: v.to_record() for k, v in loaded.items()
    }
    again.close()
    return len(receipts)
