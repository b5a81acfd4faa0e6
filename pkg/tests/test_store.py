import json
import threading
import time

import pytest

from ttsforge.errors import (
    ConflictError,
    DataError,
    ForbiddenError,
    LeaseExpiredError,
    NotFoundError,
    StoreValidationError,
)
from ttsforge.store import Annotation, Store, run_worker


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "store")
    yield s
    s.close()


def add_sample(store, dataset_id, n, wer_text="x y z", duration=3.0):
    return store.add_sample(
        dataset_id,
        f"SA{n:08d}",
        original_text="the quick brown fox jumps.",
        asr_text=wer_text,
        audio_path=f"datasets/{dataset_id}/audio/SA{n:08d}.wav",
        duration_s=duration,
    )


class TestDatasets:
    def test_create_and_get(self, store):
        dataset = store.create_dataset("german-a", "de")
        loaded = store.get_dataset(dataset.id)
        assert loaded.name == "german-a" and loaded.language == "de"

    def test_duplicate_name_conflicts(self, store):
        store.create_dataset("dup", "de")
        with pytest.raises(ConflictError):
            store.create_dataset("dup", "fr")

    def test_unknown_dataset(self, store):
        with pytest.raises(NotFoundError):
            store.get_dataset("nope")

    def test_script_roundtrip(self, store):
        dataset = store.create_dataset("s", "de")
        records = [{"id": "DE00000001", "text": "Hello there my friend now.",
                    "language": "de", "sentence_type": "declarative", "word_count": 5}]
        store.set_script(dataset.id, records)
        assert store.get_script(dataset.id) == records


class TestSampleLifecycle:
    def test_wer_prioritized_dispatch(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1, wer_text="the quick brown fox jumps")  # wer 0
        high = add_sample(store, dataset.id, 2, wer_text="a b")                 # high wer
        add_sample(store, dataset.id, 3, wer_text="the quick brown fox sings")  # low wer
        got = store.acquire_next_sample(dataset.id, "ann@x")
        assert got.id == high.id
        assert got.status == "locked"
        assert got.lock_annotator == "ann@x"

    def test_wer_tie_breaks_to_lowest_id(self, store):
        dataset = store.create_dataset("d", "de")
        a = add_sample(store, dataset.id, 7, wer_text="same words here maybe x.")
        b = add_sample(store, dataset.id, 2, wer_text="same words here maybe x.")
        got = store.acquire_next_sample(dataset.id, "ann@x")
        assert got.id == min(a.id, b.id)

    def test_empty_queue_returns_none(self, store):
        dataset = store.create_dataset("d", "de")
        assert store.acquire_next_sample(dataset.id, "ann@x") is None

    def test_unknown_dataset_is_not_found(self, store):
        with pytest.raises(NotFoundError):
            store.acquire_next_sample("missing", "ann@x")

    def test_approve_flow(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        updated = store.submit_annotation(
            sample.id, Annotation(sample.id, "ann@x", "approve", final_text="Edited text.")
        )
        assert updated.status == "annotated"
        assert updated.final_text == "Edited text."
        assert updated.lock_annotator is None

    def test_discard_flow_records_reasons(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        updated = store.submit_annotation(
            sample.id,
            Annotation(sample.id, "ann@x", "discard", discard_reasons=("repetition",)),
        )
        assert updated.status == "discarded"
        assert updated.discard_reasons == ["repetition"]

    def test_double_submit_conflicts(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        store.submit_annotation(
            sample.id, Annotation(sample.id, "ann@x", "approve", final_text="t.")
        )
        with pytest.raises(ConflictError):
            store.submit_annotation(
                sample.id, Annotation(sample.id, "ann@x", "approve", final_text="u.")
            )

    def test_submit_by_non_holder_forbidden(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        with pytest.raises(ForbiddenError):
            store.submit_annotation(
                sample.id, Annotation(sample.id, "other@x", "approve", final_text="t.")
            )

    def test_submit_without_lock_forbidden(self, store):
        dataset = store.create_dataset("d", "de")
        sample = add_sample(store, dataset.id, 1)
        with pytest.raises(ForbiddenError):
            store.submit_annotation(
                sample.id, Annotation(sample.id, "ann@x", "approve", final_text="t.")
            )

    def test_expired_lease_rejected_on_submit(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x", lease_s=0.001)
        time.sleep(0.01)
        with pytest.raises(LeaseExpiredError):
            store.submit_annotation(
                sample.id, Annotation(sample.id, "ann@x", "approve", final_text="t.")
            )

    def test_discard_requires_reason(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        with pytest.raises(StoreValidationError):
            store.submit_annotation(sample.id, Annotation(sample.id, "ann@x", "discard"))

    def test_other_reason_requires_feedback(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        with pytest.raises(StoreValidationError):
            store.submit_annotation(
                sample.id, Annotation(sample.id, "ann@x", "discard", discard_reasons=("other",))
            )

    def test_release_and_reacquire(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        store.release_lock(sample.id, "ann@x")
        assert store.get_sample(sample.id).status == "pending"
        again = store.acquire_next_sample(dataset.id, "other@x")
        assert again.id == sample.id

    def test_release_by_non_holder_forbidden(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        with pytest.raises(ForbiddenError):
            store.release_lock(sample.id, "other@x")

    def test_expire_leases(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        sample = store.acquire_next_sample(dataset.id, "ann@x", lease_s=60)
        assert store.expire_leases(now=time.time() + 120) == 1
        assert store.get_sample(sample.id).status == "pending"
        assert store.expire_leases() == 0

    def test_expired_lock_reverted_before_next_acquire(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        first = store.acquire_next_sample(dataset.id, "ann@x", lease_s=0.001)
        time.sleep(0.01)
        second = store.acquire_next_sample(dataset.id, "other@x")
        assert second.id == first.id
        assert second.lock_annotator == "other@x"

    def test_duplicate_sample_conflicts(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        with pytest.raises(ConflictError):
            add_sample(store, dataset.id, 1)

    def test_snapshots_are_isolated(self, store):
        dataset = store.create_dataset("d", "de")
        sample = add_sample(store, dataset.id, 1)
        sample.status = "mangled"
        sample.discard_reasons.append("junk")
        fresh = store.get_sample(sample.id)
        assert fresh.status == "pending"
        assert fresh.discard_reasons == []


class TestLockExclusivity:
    def test_concurrent_acquisitions_disjoint(self, store):
        dataset = store.create_dataset("d", "de")
        for i in range(16):
            add_sample(store, dataset.id, i)
        for trial in range(5):
            results = [None] * 16
            barrier = threading.Barrier(16)

            def grab(k):
                barrier.wait()
                results[k] = store.acquire_next_sample(dataset.id, f"ann{k}@x")

            threads = [threading.Thread(target=grab, args=(k,)) for k in range(16)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            ids = [r.id for r in results if r is not None]
            assert len(ids) == 16
            assert len(set(ids)) == 16
            for r in results:
                store.release_lock(r.id, r.lock_annotator)


class TestAnnotationImmutability:
    def test_annotation_survives_subsequent_operations(self, store):
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        add_sample(store, dataset.id, 2)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        store.submit_annotation(
            sample.id, Annotation(sample.id, "ann@x", "approve", final_text="frozen.")
        )
        before = store.annotation(sample.id)
        other = store.acquire_next_sample(dataset.id, "ann@x")
        store.release_lock(other.id, "ann@x")
        store.expire_leases()
        after = store.annotation(sample.id)
        assert before == after
        assert after.final_text == "frozen."


class TestExport:
    def test_manifest_filters_and_roundtrips(self, store, tmp_path):
        dataset = store.create_dataset("d", "de")
        texts = {}
        for i in range(1, 5):
            add_sample(store, dataset.id, i)
        for i in range(1, 4):
            sample = store.acquire_next_sample(dataset.id, "ann@x")
            final = f"Final text number {i}."
            texts[sample.sentence_id] = final
            store.submit_annotation(
                sample.id, Annotation(sample.id, "ann@x", "approve", final_text=final)
            )
        # discard the remaining one
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        store.submit_annotation(
            sample.id,
            Annotation(sample.id, "ann@x", "discard", discard_reasons=("truncation",)),
        )
        dest = tmp_path / "export"
        manifest = store.export_dataset(dataset.id, dest)
        lines = [json.loads(l) for l in manifest.read_text().splitlines()]
        records = [l for l in lines if "record" not in l]
        summary = [l for l in lines if l.get("record") == "summary"][0]
        assert len(records) == 3
        assert summary["exported"] == 3 and summary["excluded_discarded"] == 1
        by_sentence = {s.sentence_id: s for s in store.samples(dataset.id)}
        for record in records:
            assert record["final_text"] == texts[record["id"]]
            assert record["duration_s"] == by_sentence[record["id"]].duration_s
            assert record["wer"] == by_sentence[record["id"]].wer
        index = (dest / "index.psv").read_text().splitlines()
        assert len(index) == 3 and all("|" in line for line in index)

    def test_empty_dataset_export(self, store, tmp_path):
        dataset = store.create_dataset("d", "de")
        manifest = store.export_dataset(dataset.id, tmp_path / "out")
        lines = [json.loads(l) for l in manifest.read_text().splitlines()]
        assert len(lines) == 1 and lines[0]["record"] == "summary"


class TestJobs:
    def test_enqueue_claim_finish(self, store):
        dataset = store.create_dataset("d", "de")
        job = store.enqueue_job("export", {"dataset_id": dataset.id, "out_dir": "/tmp/x"})
        assert store.get_job(job.id).status == "pending"
        claimed = store.claim_next_job("w1")
        assert claimed.id == job.id and claimed.status == "running"
        done = store.finish_job(job.id, "w1", result={"ok": True})
        assert done.status == "done" and done.result == {"ok": True}

    def test_invalid_payload_rejected(self, store):
        with pytest.raises(StoreValidationError):
            store.enqueue_job("ingest_batch", {"dataset_id": "x"})
        with pytest.raises(StoreValidationError):
            store.enqueue_job("mystery", {})

    def test_failed_job_records_error(self, store):
        dataset = store.create_dataset("d", "de")
        job = store.enqueue_job("export", {"dataset_id": dataset.id, "out_dir": "/tmp/x"})
        store.claim_next_job("w1")
        failed = store.finish_job(job.id, "w1", error="boom")
        assert failed.status == "failed" and failed.error == "boom"

    def test_stale_claim_reclaimable(self, store):
        dataset = store.create_dataset("d", "de")
        job = store.enqueue_job("export", {"dataset_id": dataset.id, "out_dir": "/tmp/x"})
        store.claim_next_job("w1", now=1000.0)
        assert store.claim_next_job("w2", now=1100.0) is None
        reclaimed = store.claim_next_job("w2", now=1000.0 + 301.0)
        assert reclaimed is not None and reclaimed.claimed_by == "w2"

    def test_two_workers_process_each_job_once(self, store, tmp_path):
        dataset = store.create_dataset("d", "de")
        jobs = [
            store.enqueue_job("export", {"dataset_id": dataset.id, "out_dir": str(tmp_path / f"e{i}")})
            for i in range(10)
        ]
        seen = []
        seen_lock = threading.Lock()

        def handler(store_, job):
            with seen_lock:
                seen.append(job.id)
            return {"ok": True}

        stop = threading.Event()
        workers = [
            threading.Thread(
                target=run_worker,
                args=(store, {"export": handler}, stop),
                kwargs={"worker_id": f"w{i}", "poll_s": 0.01},
            )
            for i in range(2)
        ]
        for w in workers:
            w.start()
        deadline = time.time() + 10
        while time.time() < deadline:
            if all(store.get_job(j.id).status == "done" for j in jobs):
                break
            time.sleep(0.02)
        stop.set()
        for w in workers:
            w.join()
        assert sorted(seen) == sorted(j.id for j in jobs)

    def test_worker_survives_handler_exception(self, store, tmp_path):
        dataset = store.create_dataset("d", "de")
        job = store.enqueue_job("export", {"dataset_id": dataset.id, "out_dir": str(tmp_path)})

        def handler(store_, job_):
            raise RuntimeError("kaput")

        stop = threading.Event()
        worker = threading.Thread(
            target=run_worker, args=(store, {"export": handler}, stop), kwargs={"poll_s": 0.01}
        )
        worker.start()
        deadline = time.time() + 5
        while time.time() < deadline and store.get_job(job.id).status != "failed":
            time.sleep(0.02)
        stop.set()
        worker.join()
        failed = store.get_job(job.id)
        assert failed.status == "failed" and "kaput" in failed.error


class TestPersistence:
    def test_reload_restores_state(self, tmp_path):
        store = Store(tmp_path / "s")
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        add_sample(store, dataset.id, 2)
        sample = store.acquire_next_sample(dataset.id, "ann@x")
        store.submit_annotation(
            sample.id, Annotation(sample.id, "ann@x", "approve", final_text="kept.")
        )
        locked = store.acquire_next_sample(dataset.id, "ann@x")
        store.close()

        reloaded = Store(tmp_path / "s")
        annotated = reloaded.get_sample(sample.id)
        assert annotated.status == "annotated" and annotated.final_text == "kept."
        still_locked = reloaded.get_sample(locked.id)
        assert still_locked.status == "locked"
        assert still_locked.lock_annotator == "ann@x"
        reloaded.close()

    def test_torn_final_line_is_dropped(self, tmp_path):
        store = Store(tmp_path / "s")
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        store.close()
        log = tmp_path / "s" / "datasets" / dataset.id / "samples.log"
        with open(log, "a", encoding="utf-8") as fh:
            fh.write('{"type": "sample", "id": "trunc')
        reloaded = Store(tmp_path / "s")
        assert len(reloaded.samples(dataset.id)) == 1
        reloaded.close()

    def test_corrupt_middle_line_raises(self, tmp_path):
        store = Store(tmp_path / "s")
        dataset = store.create_dataset("d", "de")
        add_sample(store, dataset.id, 1)
        store.close()
        log = tmp_path / "s" / "datasets" / dataset.id / "samples.log"
        content = log.read_text()
        log.write_text("GARBAGE\n" + content)
        with pytest.raises(DataError):
            Store(tmp_path / "s")


class TestCrashSafety:
    @pytest.mark.parametrize("seed", [101, 202, 303])
    def test_kill_restart_replay(self, tmp_path, seed):
        from helpers import crash_trial

        crash_trial(tmp_path / f"crash-{seed}", seed)
