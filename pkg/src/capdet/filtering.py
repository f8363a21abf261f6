"""Data-selection strategies and selection manifests.

Five named strategies:

- ``full``: every record.
- ``random``: T records drawn uniformly without replacement, seeded.
- ``length``: the T records with the longest captions by word count.
- ``itm_length``: the T longest captions among the K records with the
  highest image-text matching scores.
- ``detailness``: semantic pruning to the top K by image-text matching
  score, then the top T by caption detailness within that set.

Every ranking breaks ties by ascending record id, so manifests are
reproducible byte for byte. Records whose detailness is undefined (zero-word
captions) rank below every defined value. Ablation variants (coverage-only,
detail-only, unnormalized products and so on) can be composed from
:func:`top_k_by_itm` and :func:`rank_by_key` directly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from capdet.errors import (
    DuplicateIdError,
    KTooLargeError,
    MalformedDocumentError,
    MissingItmScoreError,
    MissingMetricReportError,
    TTooLargeError,
)
from capdet.metrics import MetricReport, caption_length
from capdet.util import json_compact

DEFAULT_K = 30_000
DEFAULT_T = 20_000

STRATEGIES = ("full", "random", "length", "itm_length", "detailness")
RANK_KEYS = ("length", "itm", "icr", "aod", "icr_aod", "detailness")


@dataclass(frozen=True)
class SelectionSpec:
    strategy: str
    k: int = DEFAULT_K
    t: int = DEFAULT_T
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if self.k < 1 or self.t < 1:
            raise ValueError("k and t must be positive")


@dataclass(frozen=True)
class SelectionSummary:
    """Mean metrics over the selected records; coverage is in percent."""

    count: int
    avg_icr: float
    avg_aod: float
    avg_length: float


@dataclass(frozen=True)
class SelectionManifest:
    record_ids: tuple[str, ...]
    spec: SelectionSpec
    summary: SelectionSummary | None


class _RecordView:
    """Duck-typed view over anything with record_id, caption, itm_score."""

    __slots__ = ("record_id", "caption", "itm_score")

    def __init__(self, record):
        self.record_id = record.record_id
        self.caption = record.caption
        self.itm_score = getattr(record, "itm_score", None)


def _views(records) -> list[_RecordView]:
    views = [_RecordView(r) for r in records]
    seen: set[str] = set()
    for v in views:
        if v.record_id in seen:
            raise DuplicateIdError(f"duplicate record id {v.record_id!r}")
        seen.add(v.record_id)
    return views


def _require_itm(views: Sequence[_RecordView]) -> None:
    for v in views:
        if v.itm_score is None:
            raise MissingItmScoreError(f"record {v.record_id!r} has no itm_score")


def _report_map(reports: Iterable[MetricReport] | None) -> dict[str, MetricReport]:
    return {r.record_id: r for r in reports} if reports is not None else {}


def top_k_by_itm(records, k: int) -> list[str]:
    """Ids of the k records with the highest image-text matching scores,
    in descending score order (ties broken by ascending id)."""
    views = _views(records)
    _require_itm(views)
    if k > len(views):
        raise KTooLargeError(f"k={k} exceeds dataset size {len(views)}")
    ranked = sorted(views, key=lambda v: (-v.itm_score, v.record_id))
    return [v.record_id for v in ranked[:k]]


def rank_by_key(
    records,
    key: str,
    reports: Iterable[MetricReport] | None = None,
    within: Iterable[str] | None = None,
) -> list[str]:
    """All candidate ids ranked best-first by ``key``.

    ``within`` restricts candidates to an id subset (for two-stage
    strategies). Keys other than ``length`` and ``itm`` need reports.
    """
    if key not in RANK_KEYS:
        raise ValueError(f"key must be one of {RANK_KEYS}, got {key!r}")
    views = _views(records)
    if within is not None:
        keep = set(within)
        views = [v for v in views if v.record_id in keep]
    by_report = _report_map(reports)

    def report_for(v: _RecordView) -> MetricReport:
        try:
            return by_report[v.record_id]
        except KeyError:
            raise MissingMetricReportError(
                f"record {v.record_id!r} has no metric report"
            ) from None

    if key == "length":
        keyed = [(caption_length(v.caption), v.record_id) for v in views]
    elif key == "itm":
        _require_itm(views)
        keyed = [(v.itm_score, v.record_id) for v in views]
    elif key == "icr":
        keyed = [(report_for(v).icr, v.record_id) for v in views]
    elif key == "aod":
        keyed = [(report_for(v).aod, v.record_id) for v in views]
    elif key == "icr_aod":
        keyed = [(report_for(v).icr * report_for(v).aod, v.record_id) for v in views]
    else:  # detailness; undefined values sink below every defined one
        keyed = []
        for v in views:
            cd = report_for(v).detailness
            keyed.append(((0, 0.0) if cd is None else (1, cd), v.record_id))

    keyed.sort(key=lambda kv: (_neg(kv[0]), kv[1]))
    return [rid for _, rid in keyed]


def _neg(value):
    if isinstance(value, tuple):
        return tuple(-x for x in value)
    return -value


def select(
    records,
    spec: SelectionSpec,
    reports: Iterable[MetricReport] | None = None,
) -> SelectionManifest:
    """Apply a named strategy and return the ordered selection.

    A summary block is attached when reports are supplied; strategies that
    do not consume reports work without them (summary is then None).
    """
    views = _views(records)
    reports = list(reports) if reports is not None else None
    n = len(views)
    all_ids = sorted(v.record_id for v in views)

    if spec.strategy == "full":
        chosen = all_ids
    elif spec.strategy == "random":
        if spec.t > n:
            raise TTooLargeError(f"t={spec.t} exceeds dataset size {n}")
        rng = random.Random(spec.seed)
        chosen = sorted(rng.sample(all_ids, spec.t))
    elif spec.strategy == "length":
        if spec.t > n:
            raise TTooLargeError(f"t={spec.t} exceeds dataset size {n}")
        chosen = rank_by_key(views, "length")[: spec.t]
    else:
        if spec.t > spec.k:
            raise TTooLargeError(f"t={spec.t} exceeds k={spec.k}")
        pruned = top_k_by_itm(views, spec.k)
        key = "length" if spec.strategy == "itm_length" else "detailness"
        if key == "detailness" and reports is None:
            raise MissingMetricReportError(
                "the detailness strategy needs metric reports"
            )
        chosen = rank_by_key(views, key, reports=reports, within=pruned)[: spec.t]

    summary = None
    if reports is not None:
        summary = summarize_ids(chosen, reports)
    return SelectionManifest(record_ids=tuple(chosen), spec=spec, summary=summary)


def summarize_ids(
    record_ids: Sequence[str], reports: Iterable[MetricReport]
) -> SelectionSummary:
    """Arithmetic means over the given ids. Coverage is reported in percent."""
    by_id = _report_map(reports)
    picked = []
    for rid in record_ids:
        if rid not in by_id:
            raise MissingMetricReportError(f"record {rid!r} has no metric report")
        picked.append(by_id[rid])
    count = len(picked)
    if count == 0:
        return SelectionSummary(count=0, avg_icr=0.0, avg_aod=0.0, avg_length=0.0)
    return SelectionSummary(
        count=count,
        avg_icr=100.0 * sum(r.icr for r in picked) / count,
        avg_aod=sum(r.aod for r in picked) / count,
        avg_length=sum(r.length for r in picked) / count,
    )


def summarize(
    manifest: SelectionManifest, reports: Iterable[MetricReport]
) -> SelectionSummary:
    return summarize_ids(manifest.record_ids, reports)


def write_selection(manifest: SelectionManifest, include_summary: bool = True) -> bytes:
    """Manifest file: one header line echoing spec (and summary), then one
    record id per line. Byte-stable for fixed inputs."""
    header: dict = {
        "strategy": manifest.spec.strategy,
        "k": manifest.spec.k,
        "t": manifest.spec.t,
        "seed": manifest.spec.seed,
    }
    if include_summary and manifest.summary is not None:
        s = manifest.summary
        header["summary"] = {
            "count": s.count,
            "avg_icr": s.avg_icr,
            "avg_aod": s.avg_aod,
            "avg_length": s.avg_length,
        }
    lines = ["# selection " + json_compact(header)]
    lines.extend(manifest.record_ids)
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_selection(data: bytes | str) -> SelectionManifest:
    if isinstance(data, (bytes, bytearray)):
        data = bytes(data).decode("utf-8")
    lines = data.splitlines()
    if not lines or not lines[0].startswith("# selection "):
        raise MalformedDocumentError("selection file is missing its header line")
    try:
        header = json.loads(lines[0][len("# selection ") :])
        spec = SelectionSpec(
            strategy=header["strategy"],
            k=header["k"],
            t=header["t"],
            seed=header["seed"],
        )
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise MalformedDocumentError(f"bad selection header: {e}") from e
    summary = None
    if header.get("summary") is not None:
        s = header["summary"]
        summary = SelectionSummary(
            count=s["count"],
            avg_icr=s["avg_icr"],
            avg_aod=s["avg_aod"],
            avg_length=s["avg_length"],
        )
    ids = tuple(line for line in lines[1:] if line)
    return SelectionManifest(record_ids=ids, spec=spec, summary=summary)
