"""Command-line pipeline: validate, annotate, score, filter, sample, analyze.

All randomness flows from explicit seed options, outputs are written
atomically, and an existing output file is never overwritten without
``--force``, so reruns with fixed inputs produce byte-identical artifacts.

Exit codes: 0 success, 1 validation or processing failure, 2 usage error,
3 partial batch failure under ``--strict``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from capdet import analysis, filtering, metrics, sampler
from capdet.errors import CapdetError
from capdet.ingest import (
    DatasetRecord,
    ServiceClient,
    ServiceEndpointConfig,
    annotate_dataset,
    dumps_manifest,
    load_scoring_input,
    read_manifest,
)
from capdet.masks import kernel_backend, read_mask_document
from capdet.scene_graph import graph_warnings, parse_scene_graph, serialize_scene_graph
from capdet.util import atomic_write_bytes, json_compact

DEFAULT_SEED = 0
FORMATS = ("lines", "table")


@dataclass(frozen=True)
class RunConfig:
    """Resolved per-invocation settings shared by the subcommands."""

    manifest: Path | None
    cache_dir: Path | None
    out: Path | None
    seed: int = DEFAULT_SEED
    strict: bool = False
    fmt: str = "lines"
    jobs: int = 1


def _config(
    manifest=None, cache_dir=None, out=None, seed=DEFAULT_SEED,
    strict=False, fmt="lines", jobs=1,
) -> RunConfig:
    """Resolve all paths up front so later relative-directory changes and
    error messages are unambiguous."""

    def resolve(p):
        return Path(p).resolve() if p is not None else None

    return RunConfig(
        manifest=resolve(manifest),
        cache_dir=resolve(cache_dir),
        out=resolve(out),
        seed=seed,
        strict=strict,
        fmt=fmt,
        jobs=max(jobs, 1),
    )


def _fail(message: str) -> None:
    raise click.ClickException(message)


def _write_artifact(path: Path, data: bytes, force: bool) -> None:
    if path.exists() and not force:
        _fail(f"refusing to overwrite {path} (use --force)")
    atomic_write_bytes(path, data)


def _write_error_sidecar(out: Path, entries: list[dict], force: bool) -> Path:
    sidecar = out.with_name(out.name + ".errors.jsonl")
    payload = ("\n".join(json_compact(e) for e in entries) + "\n").encode("utf-8")
    _write_artifact(sidecar, payload, force)
    return sidecar


def _report_failures(entries: list[dict], strict: bool) -> None:
    for entry in entries:
        click.echo(f"error: {json_compact(entry)}", err=True)
    if entries and strict:
        sys.exit(3)


manifest_option = click.option(
    "--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True
)
cache_dir_option = click.option(
    "--cache-dir", type=click.Path(file_okay=False, path_type=Path), required=True
)
out_option = click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
force_option = click.option("--force", is_flag=True, help="Overwrite existing outputs.")
strict_option = click.option(
    "--strict/--lenient",
    default=False,
    help="Abort on malformed lines and exit 3 on partial batch failure.",
)
format_option = click.option("--format", "fmt", type=click.Choice(FORMATS), default="lines")
seed_option = click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)


@click.group()
@click.version_option(package_name="capdet")
def main():
    """Caption detailness metrics and training-data selection."""


@main.command()
def backend():
    """Print which mask kernel backend is active."""
    click.echo(kernel_backend())


@main.command()
@manifest_option
@click.option("--cache-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def validate(manifest: Path, cache_dir: Path | None):
    """Check a manifest and any referenced annotations; exit 1 on problems."""
    problems = 0
    try:
        records = read_manifest(manifest, strict=True)
    except CapdetError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    for record in records:
        for ref_field in ("scene_graph_ref", "masks_ref"):
            ref = getattr(record, ref_field)
            if ref is None:
                continue
            if cache_dir is None:
                click.echo(
                    f"error: {record.record_id}: {ref_field} set but no --cache-dir given",
                    err=True,
                )
                problems += 1
                continue
            path = cache_dir / ref
            if not path.is_file():
                click.echo(f"error: {record.record_id}: missing {ref_field} {ref}", err=True)
                problems += 1
        if cache_dir is None:
            continue
        graph = masks = None
        try:
            if record.scene_graph_ref and (cache_dir / record.scene_graph_ref).is_file():
                graph = parse_scene_graph((cache_dir / record.scene_graph_ref).read_bytes())
            if record.masks_ref and (cache_dir / record.masks_ref).is_file():
                masks = read_mask_document((cache_dir / record.masks_ref).read_bytes())
        except CapdetError as e:
            click.echo(f"error: {record.record_id}: {e}", err=True)
            problems += 1
            continue
        if graph is not None:
            for warning in graph_warnings(graph):
                click.echo(f"warning: {record.record_id}: {warning}", err=True)
        if masks is not None:
            for oid, mask in masks.items():
                if (mask.height, mask.width) != (record.image_height, record.image_width):
                    click.echo(
                        f"error: {record.record_id}: mask for {oid} is "
                        f"{mask.height}x{mask.width}, image is "
                        f"{record.image_height}x{record.image_width}",
                        err=True,
                    )
                    problems += 1
            if graph is not None:
                extra = set(masks) - {o.id for o in graph.objects}
                if extra:
                    click.echo(
                        f"warning: {record.record_id}: masks for unknown objects "
                        f"{sorted(extra)}",
                        err=True,
                    )
    click.echo(f"validated {len(records)} records, {problems} problem(s)")
    sys.exit(1 if problems else 0)


@main.command()
@manifest_option
@cache_dir_option
@out_option
@click.option("--endpoint", default=None, help="Base URL of the model services.")
@click.option("--timeout", type=float, default=30.0, show_default=True)
@click.option("--retries", type=int, default=3, show_default=True)
@click.option("--auth-env", default=None, help="Env var holding the bearer token.")
@click.option("--jobs", type=int, default=1, show_default=True)
@strict_option
@force_option
def annotate(manifest, cache_dir, out, endpoint, timeout, retries, auth_env, jobs, strict, force):
    """Fill missing scene graphs, masks, and ITM scores via the services."""
    cfg = _config(manifest=manifest, cache_dir=cache_dir, out=out, strict=strict, jobs=jobs)
    records = _read_records(cfg.manifest, cfg.strict)
    client = None
    if endpoint is not None:
        client = ServiceClient(
            ServiceEndpointConfig(
                base_url=endpoint,
                timeout=timeout,
                max_retries=retries,
                max_concurrency=cfg.jobs,
                auth_token_env=auth_env,
            )
        )
    outcome = annotate_dataset(records, client, cfg.cache_dir, jobs=cfg.jobs)
    out = cfg.out
    _write_artifact(out, dumps_manifest(outcome.records), force)
    click.echo(
        f"annotated {len(outcome.records) - len(outcome.failures)} of "
        f"{len(outcome.records)} records ({outcome.requests_made} service calls)"
    )
    entries = [{"record_id": f.record_id, "error": f.error} for f in outcome.failures]
    if entries:
        _write_error_sidecar(out, entries, force)
    _report_failures(entries, cfg.strict)


@main.command()
@manifest_option
@cache_dir_option
@out_option
@click.option(
    "--relation-counting",
    type=click.Choice(["subject_only", "both_endpoints"]),
    default="subject_only",
    show_default=True,
)
@strict_option
@force_option
@format_option
def score(manifest, cache_dir, out, relation_counting, strict, force, fmt):
    """Compute coverage, per-object detail, and detailness per record."""
    cfg = _config(manifest=manifest, cache_dir=cache_dir, out=out, strict=strict, fmt=fmt)
    records = _read_records(cfg.manifest, cfg.strict)
    inputs = []
    entries: list[dict] = []
    for record in records:
        try:
            inputs.append(load_scoring_input(record, cfg.cache_dir))
        except CapdetError as e:
            entries.append({"record_id": record.record_id, "error": str(e)})
    outcome = metrics.score_dataset(inputs, relation_counting)
    entries.extend({"record_id": f.record_id, "error": f.error} for f in outcome.failures)
    entries.sort(key=lambda e: e["record_id"])
    out, fmt = cfg.out, cfg.fmt
    _write_artifact(out, metrics.write_metric_reports(outcome.reports), force)
    if outcome.reports:
        summary = filtering.summarize_ids(
            [r.record_id for r in outcome.reports], outcome.reports
        )
        if fmt == "table":
            click.echo(f"{'records':>10} {'avg icr %':>10} {'avg aod':>10} {'avg len':>10}")
            click.echo(
                f"{summary.count:>10} {summary.avg_icr:>10.2f} "
                f"{summary.avg_aod:>10.2f} {summary.avg_length:>10.2f}"
            )
        else:
            click.echo(
                json_compact(
                    {
                        "count": summary.count,
                        "avg_icr": summary.avg_icr,
                        "avg_aod": summary.avg_aod,
                        "avg_length": summary.avg_length,
                    }
                )
            )
    else:
        click.echo(json_compact({"count": 0}))
    if entries:
        _write_error_sidecar(out, entries, force)
    _report_failures(entries, cfg.strict)


@main.command(name="filter")
@manifest_option
@out_option
@click.option("--reports", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--strategy",
    type=click.Choice(filtering.STRATEGIES),
    required=True,
)
@click.option("--k", type=int, default=filtering.DEFAULT_K, show_default=True)
@click.option("--t", type=int, default=filtering.DEFAULT_T, show_default=True)
@seed_option
@strict_option
@force_option
def filter_cmd(manifest, out, reports, strategy, k, t, seed, strict, force):
    """Select a training subset and write its selection manifest."""
    cfg = _config(manifest=manifest, out=out, seed=seed, strict=strict)
    records = _read_records(cfg.manifest, cfg.strict)
    report_list = None
    if reports is not None:
        report_list = metrics.read_metric_reports(reports.read_bytes())
    spec = filtering.SelectionSpec(strategy=strategy, k=k, t=t, seed=cfg.seed)
    try:
        manifest_out = filtering.select(records, spec, reports=report_list)
    except CapdetError as e:
        _fail(str(e))
    _write_artifact(cfg.out, filtering.write_selection(manifest_out), force)
    click.echo(f"selected {len(manifest_out.record_ids)} of {len(records)} records")


@main.command()
@manifest_option
@cache_dir_option
@out_option
@click.option(
    "--spec",
    "spec_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON list of {dimension, ratio, tolerance, seed} targets.",
)
@seed_option
@strict_option
@force_option
def sample(manifest, cache_dir, out, spec_path, seed, strict, force):
    """Sample sub-graph caption variants at target metric ratios."""
    cfg = _config(manifest=manifest, cache_dir=cache_dir, out=out, seed=seed, strict=strict)
    records = _read_records(cfg.manifest, cfg.strict)
    targets = _load_sampling_targets(spec_path, cfg.seed)
    lines: list[str] = []
    entries: list[dict] = []
    for record in records:
        try:
            inp = load_scoring_input(record, cfg.cache_dir)
        except CapdetError as e:
            entries.append({"record_id": record.record_id, "error": str(e)})
            continue
        for target in targets:
            try:
                variant = sampler.sample_subgraph(
                    inp.graph,
                    target,
                    masks=dict(inp.masks),
                    image_height=record.image_height,
                    image_width=record.image_width,
                )
            except CapdetError as e:
                entries.append(
                    {
                        "record_id": record.record_id,
                        "dimension": target.dimension,
                        "ratio": target.ratio,
                        "error": str(e),
                    }
                )
                continue
            lines.append(
                json_compact(
                    {
                        "record_id": record.record_id,
                        "dimension": target.dimension,
                        "ratio": target.ratio,
                        "tolerance": target.tolerance,
                        "seed": target.seed,
                        "achieved_ratio": variant.achieved_ratio,
                        "caption": variant.realized_caption,
                        "graph": json.loads(serialize_scene_graph(variant.subgraph)),
                    }
                )
            )
    out = cfg.out
    _write_artifact(out, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"), force)
    click.echo(f"sampled {len(lines)} variants ({len(entries)} failures)")
    if entries:
        _write_error_sidecar(out, entries, force)
    _report_failures(entries, cfg.strict)


@main.command()
@click.option("--reports", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@out_option
@click.option("--pearson", "mode", flag_value="pearson")
@click.option("--binned", "mode", flag_value="binned")
@click.option(
    "--correlation-table",
    "table_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON mapping of ratio -> {dimension: score}.",
)
@click.option(
    "--metric",
    type=click.Choice(["icr", "aod", "detailness"]),
    default="icr",
    show_default=True,
)
@click.option("--bins", type=int, default=analysis.DEFAULT_BINS, show_default=True)
@force_option
@format_option
def analyze(reports, manifest, out, mode, table_path, metric, bins, force, fmt):
    """Correlate metrics with ITM scores, or bin ITM by metric level."""
    if table_path is not None:
        doc = _read_ratio_table(table_path)
        try:
            table = analysis.correlation_table(doc)
        except CapdetError as e:
            _fail(str(e))
        result = {
            "mode": "correlation_table",
            "coefficients": dict(sorted(table.coefficients.items())),
            "failures": dict(sorted(table.failures.items())),
        }
        _write_artifact(out, (json_compact(result) + "\n").encode("utf-8"), force)
        if fmt == "table":
            click.echo(f"{'dimension':<12} {'r':>10}")
            for dim, r in sorted(table.coefficients.items()):
                click.echo(f"{dim:<12} {r:>10.4f}")
            for dim, msg in sorted(table.failures.items()):
                click.echo(f"{dim:<12} {'error: ' + msg}")
        else:
            click.echo(json_compact(result))
        return

    if mode is None:
        _fail("choose one of --pearson, --binned, or --correlation-table")
    if reports is None or manifest is None:
        _fail("--pearson/--binned need both --reports and --manifest")
    metric_values, itm_values, skipped = _join_metric_itm(reports, manifest, metric)
    if mode == "pearson":
        try:
            r = analysis.pearson(metric_values, itm_values)
        except CapdetError as e:
            _fail(str(e))
        result = {
            "mode": "pearson",
            "metric": metric,
            "r": r,
            "n": len(metric_values),
            "skipped": skipped,
        }
        _write_artifact(out, (json_compact(result) + "\n").encode("utf-8"), force)
        click.echo(json_compact(result))
        return

    try:
        curve = analysis.binned_mean(metric_values, itm_values, bins)
    except CapdetError as e:
        _fail(str(e))
    result = {
        "mode": "binned",
        "metric": metric,
        "bins": len(curve.bin_counts),
        "bin_edges": list(curve.bin_edges),
        "bin_means": list(curve.bin_means),
        "bin_counts": list(curve.bin_counts),
        "series": {
            "x": list(curve.centers()),
            "y": list(curve.bin_means),
        },
        "n": len(metric_values),
        "skipped": skipped,
    }
    _write_artifact(out, (json_compact(result) + "\n").encode("utf-8"), force)
    if fmt == "table":
        click.echo(f"{'bin':<24} {'count':>8} {'mean itm':>12}")
        for i in range(len(curve.bin_counts)):
            rng = f"[{curve.bin_edges[i]:.4f}, {curve.bin_edges[i + 1]:.4f}]"
            mean = curve.bin_means[i]
            mean_text = f"{mean:.6f}" if mean is not None else "-"
            click.echo(f"{rng:<24} {curve.bin_counts[i]:>8} {mean_text:>12}")
    else:
        click.echo(json_compact(result))


def _read_records(manifest: Path, strict: bool) -> list[DatasetRecord]:
    try:
        return read_manifest(manifest, strict=strict)
    except CapdetError as e:
        raise click.ClickException(str(e)) from e


def _load_sampling_targets(spec_path: Path | None, seed: int):
    if spec_path is None:
        return sampler.default_sampling_targets(seed)
    try:
        doc = json.loads(spec_path.read_bytes())
        targets = tuple(
            sampler.SamplingTarget(
                dimension=entry["dimension"],
                ratio=entry["ratio"],
                tolerance=entry.get("tolerance", sampler.DEFAULT_TOLERANCE),
                seed=entry.get("seed", seed),
            )
            for entry in doc
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise click.ClickException(f"bad sampling spec {spec_path}: {e}") from e
    if not targets:
        raise click.ClickException(f"sampling spec {spec_path} is empty")
    return targets


def _read_ratio_table(path: Path) -> dict[float, dict[str, float]]:
    try:
        raw = json.loads(path.read_bytes())
        return {float(ratio): dict(scores) for ratio, scores in raw.items()}
    except (json.JSONDecodeError, AttributeError, TypeError, ValueError) as e:
        raise click.ClickException(f"bad ratio table {path}: {e}") from e


def _join_metric_itm(reports_path: Path, manifest_path: Path, metric: str):
    reports = metrics.read_metric_reports(reports_path.read_bytes())
    records = read_manifest(manifest_path, strict=False)
    itm_by_id = {r.record_id: r.itm_score for r in records}
    xs: list[float] = []
    ys: list[float] = []
    skipped = 0
    for report in reports:
        itm = itm_by_id.get(report.record_id)
        value = getattr(report, metric)
        if itm is None or value is None:
            skipped += 1
            continue
        xs.append(value)
        ys.append(itm)
    return xs, ys, skipped


if __name__ == "__main__":
    main()
