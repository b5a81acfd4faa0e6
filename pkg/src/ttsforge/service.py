"""HTTP API for upload, pipeline jobs, annotation dispatch, stats and export.

Authentication is a static bearer-token allowlist (email, role, token per
line); admins manage datasets, uploads, assignments and exports, annotators
fetch and annotate samples. All state lives behind the store; background
worker threads drain the job queue so uploads return immediately with a
pollable job id.
"""

from __future__ import annotations

import io
import json
import shutil
import tempfile
import threading
import uuid
import zipfile
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

from fastapi import Depends, FastAPI, Request, Response, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import align, qa
from .align import AsrClient, CommandAsr, MatchConfig, MockAsr, rematch_segmented
from .audio import TrimConfig, VadConfig
from .config import ForgeConfig
from .corpus import Sentence
from .errors import (
    ConfigError,
    ConflictError,
    DataError,
    FilenameError,
    ForbiddenError,
    ForgeError,
    LeaseExpiredError,
    NotFoundError,
    StoreValidationError,
)
from .store import Annotation, Job, Store, run_worker

DEFAULT_MAX_UPLOAD = 2 * 1024 * 1024 * 1024  # bytes


@dataclass(frozen=True)
class Principal:
    email: str
    role: str  # admin | annotator
    token: str


def load_allowlist(path) -> dict[str, Principal]:
    """Parse ``email role token`` lines into a token-keyed principal map."""
    principals: dict[str, Principal] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3 or parts[1] not in ("admin", "annotator"):
            raise ConfigError(f"{path}:{lineno}: expected 'email role token'")
        email, role, token = parts
        if token in principals:
            raise ConfigError(f"{path}:{lineno}: duplicate token")
        principals[token] = Principal(email=email, role=role, token=token)
    return principals


def make_asr(spec: str, default_truth=None) -> AsrClient:
    """Build an ASR adapter from a CLI spec string.

    ``mock:truth=PATH,rate=0.05,seed=42`` or ``command:<template with {lang}>``.
    """
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        params = {}
        if rest:
            for item in rest.split(","):
                key, _, value = item.partition("=")
                params[key.strip()] = value.strip()
        truth = params.get("truth") or default_truth
        if not truth:
            raise ConfigError("mock asr needs truth=PATH (or an uploaded sidecar)")
        return MockAsr(
            truth,
            corruption_rate=float(params.get("rate", 0.0)),
            seed=int(params.get("seed", 42)),
        )
    if kind == "command":
        if not rest:
            raise ConfigError("command asr needs a template")
        return CommandAsr(rest)
    raise ConfigError(f"unknown asr spec {spec!r}")


class DatasetBody(BaseModel):
    name: str
    language: str = ""


class NextSampleBody(BaseModel):
    annotator_id: str | None = None


class AnnotationBody(BaseModel):
    action: str
    final_text: str | None = None
    reasons: list[str] | None = None
    feedback: str | None = None


class AssignmentBody(BaseModel):
    annotator_id: str


def build_handlers(store: Store, asr_spec: str, cfg: ForgeConfig):
    """Job handlers for the background workers."""

    def _script_sentences(dataset_id: str) -> list[Sentence]:
        records = store.get_script(dataset_id)
        if not records:
            raise DataError(f"dataset {dataset_id} has no script")
        return [Sentence.from_record(r) for r in records if "id" in r]

    def ingest_batch(store: Store, job: Job) -> dict:
        payload = job.payload
        dataset_id = payload["dataset_id"]
        dataset = store.get_dataset(dataset_id)
        script = _script_sentences(dataset_id)
        asr = make_asr(payload.get("asr") or asr_spec, payload.get("truth_path"))
        audio_dir = store.dataset_dir(dataset_id) / "audio"
        result = align.process_batch(
            payload["wav_path"],
            script,
            asr,
            audio_dir,
            vad=cfg.vad(),
            trim=cfg.trim(),
            match_cfg=cfg.match(),
            min_gap_s=cfg.get("batch.min_gap_s"),
            language=dataset.language,
            asr_parallelism=cfg.get("batch.asr_parallelism"),
        )
        by_id = {s.id: s for s in script}
        created = skipped = 0
        for match in result.match_results:
            if not match.accepted:
                continue
            sentence = by_id[match.sentence_id]
            transcript = result.transcripts[match.segment_index]
            rel = f"datasets/{dataset_id}/audio/{sentence.id}.wav"
            try:
                store.add_sample(
                    dataset_id,
                    sentence.id,
                    original_text=sentence.text,
                    asr_text=transcript.text,
                    audio_path=rel,
                    duration_s=result.segment_durations[sentence.id],
                )
                created += 1
            except ConflictError:
                skipped += 1
        return {
            "report": result.report.to_record(),
            "matches": [m.to_record() for m in result.match_results],
            "samples_created": created,
            "samples_skipped": skipped,
        }

    def rematch(store: Store, job: Job) -> dict:
        payload = job.payload
        dataset_id = payload["dataset_id"]
        dataset = store.get_dataset(dataset_id)
        script = _script_sentences(dataset_id)
        asr = make_asr(payload.get("asr") or asr_spec, payload.get("truth_path"))
        result = rematch_segmented(
            payload["wav_path"], script, asr, cfg.match(), language=dataset.language
        )
        outcome = result.to_record()
        if result.accepted:
            from .audio import read_wav

            source = Path(payload["wav_path"])
            rel = f"datasets/{dataset_id}/audio/{result.sentence_id}.wav"
            target = store.root / rel
            shutil.copyfile(source, target)
            sentence = {s.id: s for s in script}[result.sentence_id]
            transcript = asr.transcribe(
                align.AsrRequest(source, dataset.language, 0)
            )
            try:
                store.add_sample(
                    dataset_id,
                    sentence.id,
                    original_text=sentence.text,
                    asr_text=transcript,
                    audio_path=rel,
                    duration_s=read_wav(source).duration_s,
                )
                outcome["sample_created"] = True
            except ConflictError:
                outcome["sample_created"] = False
        return outcome

    def export(store: Store, job: Job) -> dict:
        manifest = store.export_dataset(job.payload["dataset_id"], job.payload["out_dir"])
        return {"manifest": str(manifest)}

    return {"ingest_batch": ingest_batch, "rematch": rematch, "export": export}


def create_app(
    store: Store,
    principals: dict[str, Principal],
    *,
    asr_spec: str = "mock:",
    cfg: ForgeConfig | None = None,
    worker_count: int = 2,
    spool_dir=None,
    cors_origins: list[str] | None = None,
    ui_dir=None,
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD,
) -> FastAPI:
    cfg = cfg or ForgeConfig()
    spool = Path(spool_dir) if spool_dir else store.root / "spool"
    spool.mkdir(parents=True, exist_ok=True)
    handlers = build_handlers(store, asr_spec, cfg)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        stop = threading.Event()
        threads = [
            threading.Thread(
                target=run_worker,
                args=(store, handlers, stop),
                kwargs={"worker_id": f"svc-{i}"},
                daemon=True,
            )
            for i in range(worker_count)
        ]
        for t in threads:
            t.start()
        try:
            yield
        finally:
            stop.set()
            for t in threads:
                t.join(timeout=5)

    app = FastAPI(title="ttsforge service", lifespan=lifespan)

    if cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def error_response(status: int, code: str, message: str, detail=None):
        return JSONResponse(
            status_code=status,
            content={"code": code, "message": message, "detail": detail},
        )

    _STATUS = {
        NotFoundError: (404, "not_found"),
        ForbiddenError: (403, "forbidden"),
        ConflictError: (409, "conflict"),
        LeaseExpiredError: (410, "lease_expired"),
        StoreValidationError: (422, "invalid"),
        FilenameError: (400, "bad_filename"),
        ConfigError: (400, "bad_config"),
        DataError: (400, "bad_data"),
    }

    @app.exception_handler(ForgeError)
    async def forge_error_handler(request: Request, exc: ForgeError):
        for klass, (status, code) in _STATUS.items():
            if isinstance(exc, klass):
                return error_response(status, code, str(exc))
        return error_response(500, "internal", str(exc))

    def authenticate(request: Request) -> Principal:
        header = request.headers.get("Authorization", "")
        token = header.removeprefix("Bearer ").strip()
        principal = principals.get(token)
        if principal is None:
            raise _HttpAuthError()
        return principal

    class _HttpAuthError(Exception):
        pass

    @app.exception_handler(_HttpAuthError)
    async def auth_error_handler(request: Request, exc: _HttpAuthError):
        return error_response(401, "unauthenticated", "missing or unknown token")

    def require_admin(principal: Principal = Depends(authenticate)) -> Principal:
        if principal.role != "admin":
            raise ForbiddenError("admin role required")
        return principal

    def require_annotator(principal: Principal = Depends(authenticate)) -> Principal:
        if principal.role != "annotator":
            raise ForbiddenError("annotator role required")
        return principal

    # ------------------------------------------------------------- routes

    @app.get("/api/health")
    async def health():
        return {"status": "ok"}

    @app.get("/api/me")
    async def whoami(principal: Principal = Depends(authenticate)):
        return {"email": principal.email, "role": principal.role}

    @app.post("/api/datasets", status_code=201)
    async def create_dataset(body: DatasetBody, principal=Depends(require_admin)):
        dataset = store.create_dataset(body.name, body.language)
        return {"id": dataset.id}

    @app.get("/api/datasets")
    async def list_datasets(principal=Depends(authenticate)):
        out = []
        for dataset in store.list_datasets():
            record = dataset.to_record()
            record["n_samples"] = len(dataset.sample_ids)
            if principal.role == "annotator":
                record["assigned"] = store.is_assigned(dataset.id, principal.email)
            out.append(record)
        return out

    @app.post("/api/datasets/{dataset_id}/script")
    async def upload_script(dataset_id: str, request: Request, principal=Depends(require_admin)):
        body = (await request.body()).decode("utf-8")
        records = [json.loads(line) for line in body.splitlines() if line.strip()]
        sentences = [r for r in records if "id" in r]
        if not sentences:
            raise StoreValidationError("script upload contains no sentence records")
        count = store.set_script(dataset_id, sentences)
        return {"sentences": count}

    @app.post("/api/datasets/{dataset_id}/batches", status_code=202)
    async def upload_batch(
        dataset_id: str,
        file: UploadFile,
        truth: UploadFile | None = None,
        principal=Depends(require_admin),
    ):
        store.get_dataset(dataset_id)
        name = file.filename or ""
        # range-named files are batch ingests; single-id files are rematches
        try:
            align.parse_batch_filename(name)
            kind = "ingest_batch"
        except FilenameError:
            align.parse_sentence_id(Path(name).stem)
            kind = "rematch"
        upload_dir = spool / uuid.uuid4().hex[:8]
        upload_dir.mkdir(parents=True, exist_ok=True)
        wav_path = upload_dir / Path(name).name
        size = 0
        with open(wav_path, "wb") as out:
            while chunk := await file.read(1 << 20):
                size += len(chunk)
                if size > max_upload_bytes:
                    out.close()
                    wav_path.unlink(missing_ok=True)
                    return error_response(413, "too_large", "upload exceeds size limit")
                out.write(chunk)
        payload = {"dataset_id": dataset_id, "wav_path": str(wav_path)}
        if truth is not None:
            truth_path = wav_path.with_suffix(".truth")
            truth_path.write_bytes(await truth.read())
            payload["truth_path"] = str(truth_path)
        job = store.enqueue_job(kind, payload)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: str, principal=Depends(authenticate)):
        return store.get_job(job_id).to_record()

    @app.post("/api/datasets/{dataset_id}/next-sample")
    async def next_sample(
        dataset_id: str,
        body: NextSampleBody | None = None,
        principal=Depends(require_annotator),
    ):
        store.get_dataset(dataset_id)
        if body and body.annotator_id and body.annotator_id != principal.email:
            raise ForbiddenError("annotator_id does not match the token")
        if not store.is_assigned(dataset_id, principal.email):
            raise ForbiddenError("annotator is not assigned to this dataset")
        sample = store.acquire_next_sample(
            dataset_id, principal.email, lease_s=cfg.get("store.lease_s")
        )
        if sample is None:
            return Response(status_code=204)
        record = sample.to_record()
        record["audio_url"] = f"/api/samples/{sample.id}/audio"
        return record

    @app.post("/api/samples/{sample_id}/annotation")
    async def annotate(
        sample_id: str, body: AnnotationBody, principal=Depends(require_annotator)
    ):
        annotation = Annotation(
            sample_id=sample_id,
            annotator_id=principal.email,
            action=body.action,
            final_text=body.final_text,
            discard_reasons=tuple(body.reasons or ()),
            feedback=body.feedback,
        )
        sample = store.submit_annotation(sample_id, annotation)
        return sample.to_record()

    @app.post("/api/samples/{sample_id}/release")
    async def release(sample_id: str, principal=Depends(require_annotator)):
        store.release_lock(sample_id, principal.email)
        return {"released": sample_id}

    @app.get("/api/samples/{sample_id}/audio")
    async def sample_audio(sample_id: str, principal=Depends(authenticate)):
        sample = store.get_sample(sample_id)
        path = store.root / sample.audio_path
        if not path.exists():
            raise NotFoundError(f"audio for {sample_id} is missing")
        return FileResponse(path, media_type="audio/wav")

    @app.get("/api/datasets/{dataset_id}/stats")
    async def dataset_stats(dataset_id: str, principal=Depends(authenticate)):
        samples = store.samples(dataset_id)
        stats = qa.dataset_stats(samples)
        totals = {"total_segments": 0, "assigned": 0}
        durations = {"before": 0.0, "after_match": 0.0, "after_trim": 0.0}
        for job in store.jobs():
            if (
                job.kind == "ingest_batch"
                and job.status == "done"
                and job.payload.get("dataset_id") == dataset_id
                and job.result
            ):
                report = job.result.get("report", {})
                totals["total_segments"] += report.get("total_segments", 0)
                totals["assigned"] += report.get("assigned", 0)
                durations["before"] += report.get("duration_before_match_s", 0.0)
                durations["after_match"] += report.get("duration_after_match_s", 0.0)
                durations["after_trim"] += report.get("duration_after_trim_s", 0.0)
        if totals["total_segments"]:
            stats.percent_assigned = totals["assigned"] / totals["total_segments"]
            stats.duration_before_match_s = round(durations["before"], 2)
            stats.duration_after_match_s = round(durations["after_match"], 2)
            stats.duration_after_trim_s = round(durations["after_trim"], 2)
        return stats.to_record()

    @app.get("/api/datasets/{dataset_id}/export")
    async def export_dataset(dataset_id: str, principal=Depends(require_admin)):
        store.get_dataset(dataset_id)
        with tempfile.TemporaryDirectory() as tmp:
            store.export_dataset(dataset_id, tmp)
            buffer = io.BytesIO()
            with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as archive:
                for path in sorted(Path(tmp).rglob("*")):
                    if path.is_file():
                        archive.write(path, path.relative_to(tmp))
        return Response(
            content=buffer.getvalue(),
            media_type="application/zip",
            headers={
                "Content-Disposition": f'attachment; filename="{dataset_id}.zip"'
            },
        )

    @app.post("/api/datasets/{dataset_id}/assignments")
    async def assign(
        dataset_id: str, body: AssignmentBody, principal=Depends(require_admin)
    ):
        store.assign_annotator(dataset_id, body.annotator_id)
        return {"assigned": body.annotator_id}

    @app.delete("/api/datasets/{dataset_id}/assignments/{annotator_id}")
    async def unassign(
        dataset_id: str, annotator_id: str, principal=Depends(require_admin)
    ):
        store.unassign_annotator(dataset_id, annotator_id)
        return {"unassigned": annotator_id}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
