"""``forge``: command-line driver for the whole pipeline.

Exit codes: 0 success, 2 usage/config problems (including bad batch
filenames given on the command line), 3 data errors, 4 internal errors.
Every command is deterministic given ``--seed`` and its inputs.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import align, qa, selection, synthetic
from .audio import read_wav
from .config import load_config
from .corpus import (
    Sentence,
    filter_corpus,
    load_abbreviation_lexicon,
    load_corpus,
    read_script,
    write_script,
)
from .errors import ConfigError, DataError, FilenameError, ForgeError
from .phoneme import Phonemizer, PhonemizerKind, PhonemizerSpec
from .qa import format_assignment_table
from .service import create_app, load_allowlist, make_asr
from .store import Store

log = logging.getLogger(__name__)


def _phonemizer(spec: str, language: str) -> Phonemizer:
    kind, _, rest = spec.partition(":")
    if kind in ("grapheme", "grapheme_fallback", ""):
        return Phonemizer(PhonemizerSpec(PhonemizerKind.GRAPHEME_FALLBACK), language)
    if kind == "lexicon":
        return Phonemizer(
            PhonemizerSpec(PhonemizerKind.LEXICON, lexicon_path=Path(rest)), language
        )
    if kind == "command":
        return Phonemizer(
            PhonemizerSpec(PhonemizerKind.EXTERNAL_COMMAND, command_template=rest),
            language,
        )
    raise ConfigError(f"unknown phonemizer spec {spec!r}")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Shared key=value config file.")
@click.option("--seed", type=int, default=None, help="RNG seed (default 42).")
@click.option("--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, seed, verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    ctx.obj = load_config(config_path, overrides)


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--lang", required=True)
@click.option("--target-words", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--phonemizer", "phonemizer_spec", default="grapheme")
@click.option("--abbreviations", type=click.Path(exists=True), default=None)
@click.option("--pool", type=int, default=None, help="Candidate pool per step.")
@click.pass_obj
def select(cfg, corpus_path, lang, target_words, out_path, phonemizer_spec, abbreviations, pool):
    """Filter a raw corpus and select a phonetically balanced script."""
    abbrev = load_abbreviation_lexicon(abbreviations) if abbreviations else set()
    accepted, rejected = filter_corpus(
        load_corpus(corpus_path, lang), cfg.corpus_filter(abbrev), lang
    )
    if not accepted:
        raise DataError("no sentences survived filtering")
    overrides = {}
    if target_words is not None:
        overrides["target_words"] = target_words
    if pool is not None:
        overrides["candidate_pool"] = pool
    sel_cfg = cfg.selection(**overrides)
    candidates = selection.build_candidates(accepted, _phonemizer(phonemizer_spec, lang))
    result = selection.run_selection(candidates, sel_cfg, language=lang)
    write_script(selection.script_records(result, sel_cfg), out_path)
    summary = result.summary_record()
    click.echo(
        f"selected {summary['sentences']} sentences, {summary['word_total']} words "
        f"(~{summary['estimated_hours']} h), divergence {summary['final_divergence']:.6f}"
    )
    click.echo(f"type fractions: {summary['type_fractions']}")
    click.echo(f"filtered corpus: {len(accepted)} accepted, {len(rejected)} rejected")
    for warning in result.lower_band_warnings:
        click.echo(f"warning: {warning}", err=True)


@cli.command("process-batch")
@click.option("--script", "script_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--audio", "audio_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--asr", "asr_spec", required=True, help="mock:truth=PATH,rate=0.05 or command:TEMPLATE")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--lang", default="")
@click.pass_obj
def process_batch(cfg, script_path, audio_path, asr_spec, out_dir, report_path, lang):
    """Segment a batch recording, match it to the script, trim and report."""
    sentences = [Sentence.from_record(r) for r in read_script(script_path) if "id" in r]
    default_truth = Path(audio_path).with_suffix(".truth")
    asr = make_asr(asr_spec, default_truth if default_truth.exists() else None)
    result = align.process_batch(
        audio_path,
        sentences,
        asr,
        out_dir,
        vad=cfg.vad(),
        trim=cfg.trim(),
        match_cfg=cfg.match(),
        min_gap_s=cfg.get("batch.min_gap_s"),
        language=lang,
        asr_parallelism=cfg.get("batch.asr_parallelism"),
    )
    report_path = Path(report_path) if report_path else Path(out_dir) / "report.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for match in result.match_results:
            fh.write(json.dumps(match.to_record(), ensure_ascii=False) + "\n")
        fh.write(json.dumps(result.report.to_record(), ensure_ascii=False) + "\n")
    record = result.report.to_record()
    click.echo(
        format_assignment_table(
            [(result.batch_name.language_prefix, Path(audio_path).name, record)]
        )
    )


@cli.command()
@click.option("--dir", "directory", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_obj
def validate(cfg, directory, report_path):
    """Validate every WAV in a directory against the audio criteria."""
    criteria = cfg.criteria()
    vad = cfg.vad()
    reports = []
    for path in sorted(Path(directory).glob("*.wav")):
        try:
            buf = read_wav(path)
        except ForgeError as exc:
            criterion = getattr(exc, "criterion", "sample_format")
            measured = getattr(exc, "measured", str(exc))
            reports.append(qa.unreadable_file_report(path.stem, criterion, measured))
            continue
        reports.append(
            qa.validate_audio(buf, None, criteria, sample_id=path.stem, vad=vad)
        )
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            for report in reports:
                fh.write(json.dumps(report.to_record(), ensure_ascii=False) + "\n")
    passed = sum(1 for r in reports if r.overall)
    for report in reports:
        status = "pass" if report.overall else "FAIL " + ",".join(report.failed_criteria())
        click.echo(f"{report.sample_id}: {status}")
    click.echo(f"{passed}/{len(reports)} files pass all criteria")


@cli.command("gen-synthetic")
@click.option("--script", "script_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth", "truth_path", type=click.Path(), default=None)
@click.option("--gap-s", type=float, default=2.5)
@click.option("--rate", type=int, default=None, help="Sample rate (default from config).")
@click.pass_obj
def gen_synthetic(cfg, script_path, out_path, truth_path, gap_s, rate):
    """Render a synthetic tone-burst batch WAV plus its truth sidecar."""
    sentences = [Sentence.from_record(r) for r in read_script(script_path) if "id" in r]
    if not sentences:
        raise DataError("script has no sentence records")
    truth_path = Path(truth_path) if truth_path else Path(out_path).with_suffix(".truth")
    batch = synthetic.synth_batch(
        sentences,
        out_path,
        truth_path,
        gap_s=gap_s,
        sample_rate=rate or cfg.get("synth.sample_rate"),
        seed=cfg.get("seed"),
        peak_db=cfg.get("synth.peak_db"),
        noise_db=cfg.get("synth.noise_db"),
        words_per_second=cfg.get("select.words_per_second"),
    )
    click.echo(
        f"wrote {batch.wav_path} ({batch.total_duration_s:.1f} s, "
        f"{len(batch.utterance_spans)} utterances) and {batch.truth_path}"
    )


@cli.command()
@click.option("--addr", default="127.0.0.1:8080")
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--allowlist", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--asr", "asr_spec", default="mock:")
@click.option("--workers", type=int, default=None)
@click.option("--cors-origin", multiple=True)
@click.option("--ui-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.pass_obj
def serve(cfg, addr, store_dir, allowlist, asr_spec, workers, cors_origin, ui_dir):
    """Run the annotation service."""
    import uvicorn

    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"--addr must be host:port, got {addr!r}")
    app = create_app(
        Store(store_dir),
        load_allowlist(allowlist),
        asr_spec=asr_spec,
        cfg=cfg,
        worker_count=workers if workers is not None else cfg.get("service.workers"),
        cors_origins=list(cors_origin),
        ui_dir=ui_dir,
    )
    uvicorn.run(app, host=host, port=int(port), log_level="warning")


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", "dataset_id", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def export(store_dir, dataset_id, out_dir):
    """Export annotated samples and their manifest for TTS training."""
    store = Store(store_dir)
    try:
        manifest = store.export_dataset(dataset_id, out_dir)
    finally:
        store.close()
    click.echo(f"manifest: {manifest}")


@cli.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", "dataset_id", required=True)
def stats(store_dir, dataset_id):
    """Print annotation statistics for a dataset."""
    store = Store(store_dir)
    try:
        dataset = store.get_dataset(dataset_id)
        record = qa.dataset_stats(store.samples(dataset_id))
    finally:
        store.close()
    click.echo(json.dumps(record.to_record(), indent=2))
    click.echo(qa.format_stats_table([(dataset.name, record)]))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except (ConfigError, FilenameError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except ForgeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        click.echo(f"internal error: {exc}", err=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
