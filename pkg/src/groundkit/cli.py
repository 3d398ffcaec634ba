"""Command-line entry point orchestrating the pipeline stages.

Every command is deterministic given identical inputs, config, and seed
(except serve), and drops a run manifest next to its output recording the
effective config plus content digests of everything read and written.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from . import __version__
from .cleaning import HttpCleaner, MockCleaner
from .core import AnnotationRecord, GroundkitError
from .dataset import (
    SplitSpec,
    assign_splits,
    clean_entries,
    dataset_stats,
    keyword_filter,
    load_manifest,
    load_proposals,
    load_regions,
    save_manifest,
    save_regions,
)
from .evaluation import EvalConfig, evaluate
from .matchers import MatchPolicy
from .refine import RefineConfig, StageCounts, refine_image


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GroundkitError(f"config file {path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise GroundkitError(f"config file {path}: top level must be an object")
    return config


def _build(cls, section: dict, overrides: dict):
    """Defaults < config-file section < explicit CLI flags."""
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("stoplist", "connectors", "quantity_words", "articles"):
        if key in merged and isinstance(merged[key], list):
            merged[key] = frozenset(merged[key])
    if "ratios" in merged and isinstance(merged["ratios"], list):
        merged["ratios"] = tuple(merged["ratios"])
    try:
        return cls(**merged)
    except TypeError as exc:
        raise GroundkitError(f"bad config for {cls.__name__}: {exc}") from exc


def _write_run_manifest(
    out: Path, command: str, config: dict, inputs: list[Path], outputs: list[Path], started: float
) -> None:
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "duration_seconds": round(time.time() - started, 3),
    }
    path = out.with_name(out.name + ".run.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _config_snapshot(obj) -> dict:
    snap = {}
    for key, value in vars(obj).items():
        if isinstance(value, frozenset):
            snap[key] = sorted(value)
        elif isinstance(value, tuple):
            snap[key] = list(value)
        elif hasattr(value, "__dict__") and not isinstance(value, (str, int, float, bool)):
            snap[key] = _config_snapshot(value)
        else:
            snap[key] = value
    return snap


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except GroundkitError as exc:
            raise click.ClickException(str(exc)) from exc


@click.group(cls=_Cli)
@click.version_option(version=__version__)
def main():
    """Visual-grounding dataset and evaluation toolkit."""


@main.command("build-dataset")
@click.argument("raw_metadata", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--keywords", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="File with one lowercase keyword per line.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--ratios", default=None, help="train,val,test ratios, e.g. 0.8,0.1,0.1")
@click.option("--delimiter", default=None, help="Joiner between title and description.")
@click.option("--clean/--no-clean", "do_clean", default=False, help="Clean captions before splitting.")
@click.option("--cleaner", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--jobs", type=int, default=4)
def cmd_build_dataset(raw_metadata, keywords, out, config_path, seed, ratios, delimiter,
                      do_clean, cleaner, jobs):
    """Filter raw metadata by keywords, clean captions, assign splits."""
    started = time.time()
    config = _load_config(config_path)

    ratio_tuple = None
    if ratios is not None:
        try:
            parts = tuple(float(x) for x in ratios.split(","))
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--ratios")
        if len(parts) != 3:
            raise click.BadParameter("need exactly three ratios", param_hint="--ratios")
        ratio_tuple = parts
    split_spec = _build(SplitSpec, config.get("split", {}), {"ratios": ratio_tuple, "seed": seed})

    keyword_list = [
        line.strip().lower()
        for line in keywords.read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.startswith("#")
    ]
    entries = load_manifest(raw_metadata)
    dataset_cfg = config.get("dataset", {})
    join = delimiter if delimiter is not None else dataset_cfg.get("delimiter", ". ")
    kept = keyword_filter(entries, keyword_list, delimiter=join)

    if do_clean:
        if cleaner == "mock":
            client = MockCleaner(tuple(config.get("cleaning", {}).get("patterns", []))
                                 or MockCleaner().patterns)
        else:
            cleaning = config.get("cleaning", {})
            for field in ("base_url", "model", "prompt_template"):
                if field not in cleaning:
                    raise GroundkitError(f"--cleaner http needs cleaning.{field} in the config file")
            client = HttpCleaner(cleaning["base_url"], cleaning["model"], cleaning["prompt_template"])
        kept = clean_entries(kept, client, jobs=jobs)

    final = assign_splits(kept, split_spec)
    save_manifest(out, final)

    snapshot = {
        "split": _config_snapshot(split_spec),
        "keywords": keyword_list,
        "delimiter": join,
        "clean": do_clean,
        "cleaner": cleaner if do_clean else None,
    }
    _write_run_manifest(out, "build-dataset", snapshot, [raw_metadata, keywords], [out], started)
    click.echo(f"kept {len(final)} of {len(entries)} entries -> {out}")


@main.command("refine")
@click.argument("proposals", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--text-threshold", type=float, default=None)
@click.option("--box-threshold", type=float, default=None)
@click.option("--jobs", type=int, default=4)
def cmd_refine(proposals, out, config_path, text_threshold, box_threshold, jobs):
    """Refine raw box-phrase proposals into pseudo-ground-truth regions."""
    started = time.time()
    config = _load_config(config_path)
    cfg = _build(
        RefineConfig,
        config.get("refine", {}),
        {"text_threshold": text_threshold, "box_threshold": box_threshold},
    )

    documents = load_proposals(proposals)

    def work(doc):
        outcome = refine_image(doc.prompt, doc.proposals, cfg, image_id=doc.image_id)
        return AnnotationRecord(
            image_id=doc.image_id,
            caption=doc.prompt.text,
            regions=outcome.regions,
            version=0,
        ), outcome.counts

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(work, documents))

    results.sort(key=lambda pair: pair[0].image_id)
    records = [record for record, _ in results]
    totals = StageCounts()
    for _, counts in results:
        totals += counts

    save_regions(out, records)
    summary = {
        "images": len(records),
        "input_proposals": totals.input,
        "output_regions": totals.output,
        "dropped": {
            "below_box_threshold": totals.below_box_threshold,
            "no_phrase_group": totals.no_phrase_group,
            "stoplisted": totals.stoplisted,
            "deduplicated": totals.deduplicated,
            "contained": totals.contained,
        },
    }
    _write_run_manifest(out, "refine", _config_snapshot(cfg), [proposals], [out], started)
    click.echo(json.dumps(summary, indent=2))


@main.command("evaluate")
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Report path prefix; writes <out>.json and <out>.txt.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--match", "match_mode", type=click.Choice(["exact", "fuzzy"]), default=None)
@click.option("--fuzzy-threshold", type=float, default=None)
@click.option("--iou-single", type=float, default=None)
@click.option("--recall-variant", type=click.Choice(["pooled", "per_class"]), default=None)
def cmd_evaluate(gt, pred, out, config_path, match_mode, fuzzy_threshold, iou_single, recall_variant):
    """Score grounding predictions against ground truth."""
    started = time.time()
    config = _load_config(config_path)
    policy = _build(
        MatchPolicy,
        config.get("match", {}),
        {"mode": match_mode, "fuzzy_threshold": fuzzy_threshold},
    )
    eval_section = {k: v for k, v in config.get("eval", {}).items()}
    if "iou_thresholds_map" in eval_section:
        eval_section["iou_thresholds_map"] = tuple(eval_section["iou_thresholds_map"])
    if "recall_ks" in eval_section:
        eval_section["recall_ks"] = tuple(eval_section["recall_ks"])
    cfg = _build(
        EvalConfig,
        {"match_policy": policy, **eval_section},
        {"iou_threshold_single": iou_single, "recall_variant": recall_variant},
    )

    report = evaluate(load_regions(gt), load_regions(pred), cfg)

    json_path = out.with_name(out.name + ".json")
    text_path = out.with_name(out.name + ".txt")
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    text_path.write_text(report.format_table() + "\n", encoding="utf-8")
    _write_run_manifest(
        out, "evaluate", _config_snapshot(cfg), [gt, pred], [json_path, text_path], started
    )
    click.echo(report.format_table())


@main.command("stats")
@click.option("--regions", "regions_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--manifest", "manifest_path", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def cmd_stats(regions_path, manifest_path, out):
    """Dataset statistics: images, regions, unique phrases, split sizes."""
    started = time.time()
    records = load_regions(regions_path)
    manifest = load_manifest(manifest_path) if manifest_path else None
    stats = dataset_stats(manifest, records)
    click.echo(stats.format_text())
    if out is not None:
        json_path = out.with_name(out.name + ".json")
        text_path = out.with_name(out.name + ".txt")
        json_path.write_text(json.dumps(stats.to_json_dict(), indent=2) + "\n", encoding="utf-8")
        text_path.write_text(stats.format_text() + "\n", encoding="utf-8")
        inputs = [regions_path] + ([manifest_path] if manifest_path else [])
        _write_run_manifest(out, "stats", {}, inputs, [json_path, text_path], started)


@main.command("serve")
@click.option("--data-dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--images-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--ui-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--ingest", "ingest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="Seed the store from a regions.jsonl file.")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
def cmd_serve(data_dir, images_dir, ui_dir, ingest_path, host, port):
    """Run the annotation-correction service."""
    import uvicorn

    from .service import create_app

    app = create_app(data_dir, images_dir, ui_dir)
    if ingest_path is not None:
        added = app.state.store.ingest(load_regions(ingest_path))
        click.echo(f"ingested {added} new records from {ingest_path}")
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        raise GroundkitError(f"cannot bind {host}:{port}: {exc}") from exc


if __name__ == "__main__":
    main()
