"""File-backed persistence for datasets, samples, annotations and jobs.

The store is the system's serialization point: every mutation happens under
one writer lock, is appended to a per-entity JSONL log and fsynced before the
call returns, so a killed process loses at most the operation in flight. On
load the logs are replayed; a torn final line (mid-append crash) is dropped.

Sample lifecycle: pending -> locked -> {pending, annotated, discarded};
annotated/discarded are terminal and absorbing, one immutable annotation per
sample. Dispatch picks the highest-WER pending sample (ties to the lowest
id) and locks it to the annotator with a lease; expired leases revert to
pending before each acquisition.
"""

from __future__ import annotations

import json
import os
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

from .align import compute_wer
from .errors import (
    ConflictError,
    DataError,
    ForbiddenError,
    LeaseExpiredError,
    NotFoundError,
    StoreValidationError,
)
from .qa import DiscardReason

JOB_KINDS = ("ingest_batch", "rematch", "export")
TERMINAL_STATUSES = ("annotated", "discarded")
DEFAULT_LEASE_S = 900.0
DEFAULT_JOB_RECLAIM_S = 300.0


@dataclass
class Dataset:
    id: str
    name: str
    language: str
    created_at: float
    sample_ids: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "language": self.language,
            "created_at": self.created_at,
        }


@dataclass
class Sample:
    id: str
    dataset_id: str
    sentence_id: str
    original_text: str
    asr_text: str
    audio_path: str
    duration_s: float
    wer: float
    status: str = "pending"
    final_text: str | None = None
    discard_reasons: list[str] = field(default_factory=list)
    feedback: str | None = None
    lock_annotator: str | None = None
    lock_expiry: float | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "dataset_id": self.dataset_id,
            "sentence_id": self.sentence_id,
            "original_text": self.original_text,
            "asr_text": self.asr_text,
            "audio_path": self.audio_path,
            "duration_s": self.duration_s,
            "wer": self.wer,
            "status": self.status,
            "final_text": self.final_text,
            "discard_reasons": list(self.discard_reasons),
            "feedback": self.feedback,
            "lock_annotator": self.lock_annotator,
            "lock_expiry": self.lock_expiry,
        }

    def snapshot(self) -> "Sample":
        return replace(self, discard_reasons=list(self.discard_reasons))


@dataclass(frozen=True)
class Annotation:
    sample_id: str
    annotator_id: str
    action: str  # approve | discard
    final_text: str | None = None
    discard_reasons: tuple[str, ...] = ()
    feedback: str | None = None
    created_at: float = 0.0

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "annotator_id": self.annotator_id,
            "action": self.action,
            "final_text": self.final_text,
            "discard_reasons": list(self.discard_reasons),
            "feedback": self.feedback,
            "created_at": self.created_at,
        }


@dataclass
class Job:
    id: str
    kind: str
    payload: dict
    status: str = "pending"
    error: str | None = None
    result: dict | None = None
    created_at: float = 0.0
    claimed_by: str | None = None
    claimed_at: float | None = None
    finished_at: float | None = None

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "payload": self.payload,
            "status": self.status,
            "error": self.error,
            "result": self.result,
            "created_at": self.created_at,
            "claimed_by": self.claimed_by,
            "claimed_at": self.claimed_at,
            "finished_at": self.finished_at,
        }

    def snapshot(self) -> "Job":
        return replace(self, payload=dict(self.payload))


class _Log:
    """Append-only JSONL file with fsync-on-append and torn-tail tolerance."""

    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read(path: Path) -> list[dict]:
        if not path.exists():
            return []
        records = []
        lines = path.read_text(encoding="utf-8").splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break  # torn final append from a crash
                raise DataError(f"{path}: corrupt log at line {i + 1}")
        return records


class _DatasetState:
    def __init__(self, meta: Dataset, directory: Path):
        self.meta = meta
        self.directory = directory
        self.samples: dict[str, Sample] = {}
        self.annotations: dict[str, Annotation] = {}
        self.samples_log = _Log(directory / "samples.log")
        self.annotations_log = _Log(directory / "annotations.log")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class Store:
    """Single-writer transactional store rooted at a directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "datasets").mkdir(exist_ok=True)
        self._lock = threading.RLock()
        self._datasets: dict[str, _DatasetState] = {}
        self._by_name: dict[str, str] = {}
        self._jobs: dict[str, Job] = {}
        self._assignments: set[tuple[str, str]] = set()
        self._jobs_log = _Log(self.root / "jobs.log")
        self._assignments_log = _Log(self.root / "assignments.log")
        self._load()

    # ------------------------------------------------------------- loading

    def _load(self) -> None:
        for meta_path in sorted(self.root.glob("datasets/*/meta")):
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            dataset = Dataset(
                id=meta["id"],
                name=meta["name"],
                language=meta["language"],
                created_at=meta["created_at"],
            )
            state = _DatasetState(dataset, meta_path.parent)
            self._datasets[dataset.id] = state
            self._by_name[dataset.name] = dataset.id
            for record in _Log.read(state.directory / "samples.log"):
                self._replay_sample_event(state, record)
            for record in _Log.read(state.directory / "annotations.log"):
                self._replay_annotation(state, record)
            dataset.sample_ids = sorted(state.samples)
        for record in _Log.read(self.root / "jobs.log"):
            self._replay_job_event(record)
        for record in _Log.read(self.root / "assignments.log"):
            pair = (record["annotator_id"], record["dataset_id"])
            if record["type"] == "assign":
                self._assignments.add(pair)
            else:
                self._assignments.discard(pair)

    def _replay_sample_event(self, state: _DatasetState, record: dict) -> None:
        kind = record.get("type")
        if kind == "sample":
            sample = Sample(
                id=record["id"],
                dataset_id=record["dataset_id"],
                sentence_id=record["sentence_id"],
                original_text=record["original_text"],
                asr_text=record["asr_text"],
                audio_path=record["audio_path"],
                duration_s=record["duration_s"],
                wer=record["wer"],
            )
            state.samples[sample.id] = sample
        elif kind == "lock":
            sample = state.samples.get(record["sample_id"])
            if sample is not None and sample.status == "pending":
                sample.status = "locked"
                sample.lock_annotator = record["annotator_id"]
                sample.lock_expiry = record["lease_expiry"]
        elif kind == "release":
            sample = state.samples.get(record["sample_id"])
            if sample is not None and sample.status == "locked":
                sample.status = "pending"
                sample.lock_annotator = None
                sample.lock_expiry = None

    def _replay_annotation(self, state: _DatasetState, record: dict) -> None:
        annotation = Annotation(
            sample_id=record["sample_id"],
            annotator_id=record["annotator_id"],
            action=record["action"],
            final_text=record.get("final_text"),
            discard_reasons=tuple(record.get("discard_reasons") or ()),
            feedback=record.get("feedback"),
            created_at=record.get("created_at", 0.0),
        )
        sample = state.samples.get(annotation.sample_id)
        if sample is None or annotation.sample_id in state.annotations:
            return
        state.annotations[annotation.sample_id] = annotation
        sample.lock_annotator = None
        sample.lock_expiry = None
        if annotation.action == "approve":
            sample.status = "annotated"
            sample.final_text = annotation.final_text
        else:
            sample.status = "discarded"
            sample.discard_reasons = list(annotation.discard_reasons)
            sample.feedback = annotation.feedback

    def _replay_job_event(self, record: dict) -> None:
        kind = record.get("type")
        if kind == "job":
            self._jobs[record["id"]] = Job(
                id=record["id"],
                kind=record["kind"],
                payload=record["payload"],
                created_at=record.get("created_at", 0.0),
            )
        elif kind == "job_claim":
            job = self._jobs.get(record["id"])
            if job is not None and job.status in ("pending", "running"):
                job.status = "running"
                job.claimed_by = record["worker_id"]
                job.claimed_at = record["ts"]
        elif kind in ("job_done", "job_failed"):
            job = self._jobs.get(record["id"])
            if job is not None and job.status == "running":
                job.status = "done" if kind == "job_done" else "failed"
                job.error = record.get("error")
                job.result = record.get("result")
                job.finished_at = record.get("ts")

    # ------------------------------------------------------------ datasets

    def create_dataset(self, name: str, language: str) -> Dataset:
        with self._lock:
            if not name:
                raise StoreValidationError("dataset name required")
            if name in self._by_name:
                raise ConflictError(f"dataset name {name!r} already exists")
            dataset = Dataset(
                id=uuid.uuid4().hex[:12],
                name=name,
                language=language,
                created_at=time.time(),
            )
            directory = self.root / "datasets" / dataset.id
            (directory / "audio").mkdir(parents=True, exist_ok=True)
            _atomic_write(
                directory / "meta", json.dumps(dataset.to_record(), ensure_ascii=False)
            )
            self._datasets[dataset.id] = _DatasetState(dataset, directory)
            self._by_name[name] = dataset.id
            return replace(dataset)

    def get_dataset(self, dataset_id: str) -> Dataset:
        state = self._state(dataset_id)
        with self._lock:
            dataset = replace(state.meta)
            dataset.sample_ids = sorted(state.samples)
            return dataset

    def list_datasets(self) -> list[Dataset]:
        with self._lock:
            return [self.get_dataset(did) for did in sorted(self._datasets)]

    def dataset_dir(self, dataset_id: str) -> Path:
        return self._state(dataset_id).directory

    def _state(self, dataset_id: str) -> _DatasetState:
        state = self._datasets.get(dataset_id)
        if state is None:
            raise NotFoundError(f"dataset {dataset_id!r} not found")
        return state

    # -------------------------------------------------------------- script

    def set_script(self, dataset_id: str, records: Iterable[dict]) -> int:
        state = self._state(dataset_id)
        with self._lock:
            lines = [json.dumps(r, ensure_ascii=False) for r in records]
            _atomic_write(state.directory / "script.jsonl", "\n".join(lines) + "\n")
            return len(lines)

    def get_script(self, dataset_id: str) -> list[dict]:
        state = self._state(dataset_id)
        path = state.directory / "script.jsonl"
        if not path.exists():
            return []
        return [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    # ------------------------------------------------------------- samples

    def add_sample(
        self,
        dataset_id: str,
        sentence_id: str,
        original_text: str,
        asr_text: str,
        audio_path: str,
        duration_s: float,
    ) -> Sample:
        """Create a pending sample; WER is computed here, once, and never
        changes afterwards."""
        state = self._state(dataset_id)
        with self._lock:
            sample_id = f"{dataset_id}.{sentence_id}"
            if sample_id in state.samples:
                raise ConflictError(f"sample {sample_id} already exists")
            try:
                wer = compute_wer(original_text, asr_text)
            except DataError:
                wer = 0.0
            sample = Sample(
                id=sample_id,
                dataset_id=dataset_id,
                sentence_id=sentence_id,
                original_text=original_text,
                asr_text=asr_text,
                audio_path=audio_path,
                duration_s=duration_s,
                wer=wer,
            )
            record = sample.to_record()
            record["type"] = "sample"
            state.samples_log.append(record)
            state.samples[sample_id] = sample
            return sample.snapshot()

    def get_sample(self, sample_id: str) -> Sample:
        with self._lock:
            sample = self._find_sample(sample_id)
            return sample.snapshot()

    def _find_sample(self, sample_id: str) -> Sample:
        dataset_id = sample_id.split(".", 1)[0]
        state = self._datasets.get(dataset_id)
        if state is None or sample_id not in state.samples:
            raise NotFoundError(f"sample {sample_id!r} not found")
        return state.samples[sample_id]

    def samples(self, dataset_id: str) -> list[Sample]:
        state = self._state(dataset_id)
        with self._lock:
            return [s.snapshot() for _, s in sorted(state.samples.items())]

    def annotation(self, sample_id: str) -> Annotation | None:
        with self._lock:
            sample = self._find_sample(sample_id)
            state = self._datasets[sample.dataset_id]
            return state.annotations.get(sample_id)

    # ---------------------------------------------------- locks & dispatch

    def acquire_next_sample(
        self,
        dataset_id: str,
        annotator_id: str,
        lease_s: float = DEFAULT_LEASE_S,
        now: float | None = None,
    ) -> Sample | None:
        """Atomically lock and return the pending sample with the highest
        WER (ties to the lowest sample id), or None when the queue is empty.
        Expired locks are reverted to pending first."""
        state = self._state(dataset_id)
        with self._lock:
            now = time.time() if now is None else now
            self._expire_dataset_leases(state, now)
            best: Sample | None = None
            for sample_id in sorted(state.samples):
                sample = state.samples[sample_id]
                if sample.status != "pending":
                    continue
                if best is None or sample.wer > best.wer:
                    best = sample
            if best is None:
                return None
            state.samples_log.append(
                {
                    "type": "lock",
                    "sample_id": best.id,
                    "annotator_id": annotator_id,
                    "lease_expiry": now + lease_s,
                }
            )
            best.status = "locked"
            best.lock_annotator = annotator_id
            best.lock_expiry = now + lease_s
            return best.snapshot()

    def _expire_dataset_leases(self, state: _DatasetState, now: float) -> int:
        reverted = 0
        for sample in state.samples.values():
            if (
                sample.status == "locked"
                and sample.lock_expiry is not None
                and sample.lock_expiry <= now
            ):
                state.samples_log.append({"type": "release", "sample_id": sample.id})
                sample.status = "pending"
                sample.lock_annotator = None
                sample.lock_expiry = None
                reverted += 1
        return reverted

    def expire_leases(self, now: float | None = None) -> int:
        with self._lock:
            now = time.time() if now is None else now
            return sum(
                self._expire_dataset_leases(state, now)
                for state in self._datasets.values()
            )

    def release_lock(self, sample_id: str, annotator_id: str) -> None:
        with self._lock:
            sample = self._find_sample(sample_id)
            if sample.status != "locked":
                return
            if sample.lock_annotator != annotator_id:
                raise ForbiddenError("lock held by another annotator")
            state = self._datasets[sample.dataset_id]
            state.samples_log.append({"type": "release", "sample_id": sample_id})
            sample.status = "pending"
            sample.lock_annotator = None
            sample.lock_expiry = None

    def submit_annotation(
        self, sample_id: str, annotation: Annotation, now: float | None = None
    ) -> Sample:
        """Write the single immutable annotation for a locked sample and move
        it to its terminal status."""
        with self._lock:
            now = time.time() if now is None else now
            sample = self._find_sample(sample_id)
            state = self._datasets[sample.dataset_id]
            if sample.status in TERMINAL_STATUSES:
                raise ConflictError("sample already has its single annotation")
            if sample.status != "locked" or sample.lock_annotator != annotation.annotator_id:
                raise ForbiddenError("caller does not hold the sample lock")
            if sample.lock_expiry is not None and sample.lock_expiry <= now:
                raise LeaseExpiredError("lock lease has expired")
            if annotation.action == "approve":
                if annotation.final_text is None:
                    raise StoreValidationError("approve requires final_text")
            elif annotation.action == "discard":
                if not annotation.discard_reasons:
                    raise StoreValidationError("discard requires at least one reason")
                for reason in annotation.discard_reasons:
                    try:
                        DiscardReason(reason)
                    except ValueError:
                        raise StoreValidationError(
                            f"unknown discard reason {reason!r}"
                        ) from None
                    if reason == DiscardReason.OTHER.value and not annotation.feedback:
                        raise StoreValidationError("reason 'other' requires feedback")
            else:
                raise StoreValidationError(f"unknown action {annotation.action!r}")

            stamped = replace(annotation, sample_id=sample_id, created_at=now)
            record = stamped.to_record()
            record["type"] = "annotation"
            state.annotations_log.append(record)
            self._replay_annotation(state, record)
            return state.samples[sample_id].snapshot()

    # ---------------------------------------------------------- assignment

    def assign_annotator(self, dataset_id: str, annotator_id: str) -> None:
        self._state(dataset_id)
        with self._lock:
            self._assignments_log.append(
                {"type": "assign", "annotator_id": annotator_id, "dataset_id": dataset_id}
            )
            self._assignments.add((annotator_id, dataset_id))

    def unassign_annotator(self, dataset_id: str, annotator_id: str) -> None:
        with self._lock:
            self._assignments_log.append(
                {"type": "unassign", "annotator_id": annotator_id, "dataset_id": dataset_id}
            )
            self._assignments.discard((annotator_id, dataset_id))

    def is_assigned(self, dataset_id: str, annotator_id: str) -> bool:
        with self._lock:
            return (annotator_id, dataset_id) in self._assignments

    # -------------------------------------------------------------- export

    def export_dataset(self, dataset_id: str, destination) -> Path:
        """Copy annotated samples' audio plus a manifest to ``destination``.

        Manifest lines: {id, final_text, audio, duration_s, wer}; discarded
        are excluded; pending/locked are excluded and counted in the summary
        footer. Also writes a pipe-delimited ``index.psv``."""
        state = self._state(dataset_id)
        destination = Path(destination)
        audio_dir = destination / "audio"
        audio_dir.mkdir(parents=True, exist_ok=True)
        with self._lock:
            samples = [s.snapshot() for _, s in sorted(state.samples.items())]
        manifest_path = destination / "manifest.jsonl"
        counts = {"annotated": 0, "discarded": 0, "pending": 0, "locked": 0}
        index_lines = []
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for sample in samples:
                counts[sample.status] = counts.get(sample.status, 0) + 1
                if sample.status != "annotated":
                    continue
                source = self.root / sample.audio_path
                rel = f"audio/{sample.sentence_id}.wav"
                if source.exists():
                    shutil.copyfile(source, destination / rel)
                fh.write(
                    json.dumps(
                        {
                            "id": sample.sentence_id,
                            "final_text": sample.final_text,
                            "audio": rel,
                            "duration_s": sample.duration_s,
                            "wer": sample.wer,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                index_lines.append(f"{sample.sentence_id}|{sample.final_text}")
            fh.write(
                json.dumps(
                    {
                        "record": "summary",
                        "exported": counts.get("annotated", 0),
                        "excluded_discarded": counts.get("discarded", 0),
                        "excluded_pending": counts.get("pending", 0),
                        "excluded_locked": counts.get("locked", 0),
                    }
                )
                + "\n"
            )
        (destination / "index.psv").write_text(
            "\n".join(index_lines) + ("\n" if index_lines else ""), encoding="utf-8"
        )
        return manifest_path

    # ---------------------------------------------------------------- jobs

    def enqueue_job(self, kind: str, payload: dict) -> Job:
        with self._lock:
            if kind not in JOB_KINDS:
                raise StoreValidationError(f"unknown job kind {kind!r}")
            required = {
                "ingest_batch": ("dataset_id", "wav_path"),
                "rematch": ("dataset_id", "wav_path"),
                "export": ("dataset_id", "out_dir"),
            }[kind]
            missing = [k for k in required if not payload.get(k)]
            if missing:
                raise StoreValidationError(f"{kind} payload missing {missing}")
            if "dataset_id" in payload:
                self._state(payload["dataset_id"])
            job = Job(
                id=uuid.uuid4().hex[:12],
                kind=kind,
                payload=dict(payload),
                created_at=time.time(),
            )
            self._jobs_log.append(
                {
                    "type": "job",
                    "id": job.id,
                    "kind": job.kind,
                    "payload": job.payload,
                    "created_at": job.created_at,
                }
            )
            self._jobs[job.id] = job
            return job.snapshot()

    def get_job(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"job {job_id!r} not found")
            return job.snapshot()

    def claim_next_job(
        self,
        worker_id: str,
        now: float | None = None,
        reclaim_after_s: float = DEFAULT_JOB_RECLAIM_S,
    ) -> Job | None:
        """Atomically claim the oldest runnable job. A running job whose
        claim is older than ``reclaim_after_s`` is considered orphaned by a
        crashed worker and may be reclaimed."""
        with self._lock:
            now = time.time() if now is None else now
            for job in sorted(self._jobs.values(), key=lambda j: (j.created_at, j.id)):
                stale = (
                    job.status == "running"
                    and job.claimed_at is not None
                    and now - job.claimed_at > reclaim_after_s
                )
                if job.status == "pending" or stale:
                    self._jobs_log.append(
                        {"type": "job_claim", "id": job.id, "worker_id": worker_id, "ts": now}
                    )
                    job.status = "running"
                    job.claimed_by = worker_id
                    job.claimed_at = now
                    return job.snapshot()
            return None

    def finish_job(
        self,
        job_id: str,
        worker_id: str,
        error: str | None = None,
        result: dict | None = None,
    ) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise NotFoundError(f"job {job_id!r} not found")
            if job.status != "running" or job.claimed_by != worker_id:
                raise ConflictError("job is not running under this worker")
            kind = "job_failed" if error else "job_done"
            ts = time.time()
            self._jobs_log.append(
                {"type": kind, "id": job_id, "error": error, "result": result, "ts": ts}
            )
            job.status = "failed" if error else "done"
            job.error = error
            job.result = result
            job.finished_at = ts
            return job.snapshot()

    def jobs(self) -> list[Job]:
        with self._lock:
            return [j.snapshot() for j in sorted(self._jobs.values(), key=lambda j: j.created_at)]

    def close(self) -> None:
        with self._lock:
            for state in self._datasets.values():
                state.samples_log.close()
                state.annotations_log.close()
            self._jobs_log.close()
            self._assignments_log.close()


def run_worker(
    store: Store,
    handlers: dict[str, Callable[[Store, Job], dict]],
    stop_event: threading.Event,
    worker_id: str | None = None,
    poll_s: float = 0.1,
) -> int:
    """Drain the job queue until ``stop_event`` is set; returns jobs processed.

    Each claimed job runs its handler; exceptions mark the job failed with
    the error text and never kill the worker."""
    worker_id = worker_id or f"worker-{uuid.uuid4().hex[:6]}"
    processed = 0
    while not stop_event.is_set():
        job = store.claim_next_job(worker_id)
        if job is None:
            stop_event.wait(poll_s)
            continue
        handler = handlers.get(job.kind)
        try:
            if handler is None:
                raise DataError(f"no handler for job kind {job.kind!r}")
            result = handler(store, job)
            store.finish_job(job.id, worker_id, result=result)
        except Exception as exc:  # noqa: BLE001 - worker must survive any job
            store.finish_job(job.id, worker_id, error=f"{type(exc).__name__}: {exc}")
        processed += 1
    return processed
