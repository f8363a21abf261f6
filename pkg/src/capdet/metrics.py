"""Per-record caption metrics.

Three numbers summarize how much visual detail a caption carries:

- image coverage rate (icr): fraction of image pixels covered by the union
  of the masks of the caption's objects, in [0, 1]
- average object detailness (aod): mean number of attribute pairs plus
  relation triplets per object in the caption's scene graph
- caption detailness: icr * aod / word count, which rewards dense visual
  content and penalizes padding; undefined for zero-word captions

Objects mentioned in the graph but missing from the mask document contribute
zero area while still counting in the aod denominator, so ungrounded mentions
depress coverage instead of inflating it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from capdet.errors import (
    CapdetError,
    DimensionMismatchError,
    MalformedDocumentError,
    ZeroImageAreaError,
    ZeroLengthError,
)
from capdet.masks import RleMask, union_area
from capdet.scene_graph import (
    DEFAULT_RELATION_COUNTING,
    RelationCounting,
    SceneGraph,
)
from capdet.util import json_compact


def compute_icr(
    image_height: int, image_width: int, masks: Iterable[RleMask]
) -> float:
    """Union coverage of the masks as a fraction of the image area."""
    if image_height <= 0 or image_width <= 0:
        raise ZeroImageAreaError(
            f"image dimensions must be positive, got {image_height}x{image_width}"
        )
    masks = list(masks)
    if not masks:
        return 0.0
    for m in masks:
        if (m.height, m.width) != (image_height, image_width):
            raise DimensionMismatchError(
                f"mask is {m.height}x{m.width}, image is {image_height}x{image_width}"
            )
    return union_area(masks) / (image_height * image_width)


def detail_edge_total(
    g: SceneGraph, relation_counting: RelationCounting = DEFAULT_RELATION_COUNTING
) -> int:
    """Integer numerator of the average object detailness.

    Under subject-only counting every relation is counted exactly once (via
    its subject), so the total is |relations| + |attributes|. Under
    both-endpoints counting a non-self relation counts twice.
    """
    if relation_counting == "subject_only":
        return len(g.relations) + len(g.attributes)
    if relation_counting == "both_endpoints":
        rel = sum(1 if r.subject_id == r.object_id else 2 for r in g.relations)
        return rel + len(g.attributes)
    raise ValueError(f"unknown relation_counting mode {relation_counting!r}")


def compute_aod(
    g: SceneGraph, relation_counting: RelationCounting = DEFAULT_RELATION_COUNTING
) -> float:
    """Mean attribute-plus-relation count per object; 0.0 for an empty graph."""
    n = len(g.objects)
    if n == 0:
        return 0.0
    return detail_edge_total(g, relation_counting) / n


def caption_length(caption: str) -> int:
    """Word count: maximal runs of non-whitespace under Unicode splitting."""
    return len(caption.split())


def compute_detailness(icr: float, aod: float, length: int) -> float:
    """Length-normalized combination of coverage and per-object detail."""
    if length <= 0:
        raise ZeroLengthError("caption has no words; detailness is undefined")
    return icr * aod / length


@dataclass(frozen=True)
class MetricReport:
    """Per-record metric values; ``detailness`` is None for zero-word captions."""

    record_id: str
    icr: float
    aod: float
    length: int
    detailness: float | None


@dataclass(frozen=True)
class ScoringInput:
    """One record with its annotations already joined in."""

    record_id: str
    image_height: int
    image_width: int
    caption: str
    graph: SceneGraph
    masks: Mapping[str, RleMask]


@dataclass(frozen=True)
class ScoreFailure:
    record_id: str
    error: str


@dataclass(frozen=True)
class ScoreOutcome:
    reports: tuple[MetricReport, ...]
    failures: tuple[ScoreFailure, ...]


def score_record(
    inp: ScoringInput,
    relation_counting: RelationCounting = DEFAULT_RELATION_COUNTING,
) -> MetricReport:
    """Compute all metrics for one record."""
    grounded = [inp.masks[o.id] for o in inp.graph.objects if o.id in inp.masks]
    icr = compute_icr(inp.image_height, inp.image_width, grounded)
    aod = compute_aod(inp.graph, relation_counting)
    length = caption_length(inp.caption)
    detailness = icr * aod / length if length > 0 else None
    return MetricReport(
        record_id=inp.record_id, icr=icr, aod=aod, length=length, detailness=detailness
    )


def score_dataset(
    inputs: Iterable[ScoringInput],
    relation_counting: RelationCounting = DEFAULT_RELATION_COUNTING,
) -> ScoreOutcome:
    """Score records independently; failures are collected, never fatal.

    Reports come back ordered by record id regardless of input order.
    """
    reports: list[MetricReport] = []
    failures: list[ScoreFailure] = []
    for inp in inputs:
        try:
            reports.append(score_record(inp, relation_counting))
        except CapdetError as e:
            failures.append(ScoreFailure(record_id=inp.record_id, error=str(e)))
    reports.sort(key=lambda r: r.record_id)
    failures.sort(key=lambda f: f.record_id)
    return ScoreOutcome(reports=tuple(reports), failures=tuple(failures))


def report_to_json(report: MetricReport) -> str:
    return json_compact(
        {
            "record_id": report.record_id,
            "icr": report.icr,
            "aod": report.aod,
            "length": report.length,
            "detailness": report.detailness,
        }
    )


def write_metric_reports(reports: Iterable[MetricReport]) -> bytes:
    """Line-delimited report serialization, one JSON document per record."""
    lines = [report_to_json(r) for r in reports]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def read_metric_reports(data: bytes | str) -> list[MetricReport]:
    if isinstance(data, (bytes, bytearray)):
        data = bytes(data).decode("utf-8")
    reports = []
    for line_no, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            reports.append(
                MetricReport(
                    record_id=obj["record_id"],
                    icr=float(obj["icr"]),
                    aod=float(obj["aod"]),
                    length=int(obj["length"]),
                    detailness=None if obj["detailness"] is None else float(obj["detailness"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise MalformedDocumentError(f"bad report line {line_no}: {e}") from e
    return reports
