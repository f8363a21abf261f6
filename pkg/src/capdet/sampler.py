"""Sub-graph sampling: shrink a scene graph until its coverage or detailness
hits a target fraction of the original, then realize the result as text.

Coverage targets are hit by choosing a subset of objects (attributes and
relations follow by graph induction). Because masks overlap, the subset is
found by seeded randomized greedy insertion with restarts, with an exhaustive
subset search as the exact fallback on graphs of at most 12 objects.
Detailness targets keep every object and subsample the pooled attribute and
relation edges uniformly.

Everything here is deterministic given the target's seed; captions are
produced by a fixed sentence template rather than a language model.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from capdet.errors import (
    DimensionMismatchError,
    UnreachableTargetError,
    ZeroOriginalAodError,
    ZeroOriginalIcrError,
)
from capdet.masks import RleMask, rle_decode
from capdet.scene_graph import SceneGraph, build_graph, induced_subgraph

DEFAULT_RATIOS = (0.2, 0.4, 0.6, 0.8)
DEFAULT_TOLERANCE = 0.05
DEFAULT_MAX_RESTARTS = 64

# Exhaustive subset search is exact but exponential; cap it where 2^n stays small.
EXHAUSTIVE_LIMIT = 12

ICR = "icr"
AOD = "aod"


@dataclass(frozen=True)
class SamplingTarget:
    """A requested fraction of the original metric, with acceptance window
    ``[ratio - tolerance, ratio + tolerance]`` (absolute deviation)."""

    dimension: str
    ratio: float
    tolerance: float = DEFAULT_TOLERANCE
    seed: int = 0
    max_restarts: int = DEFAULT_MAX_RESTARTS

    def __post_init__(self):
        if self.dimension not in (ICR, AOD):
            raise ValueError(f"dimension must be {ICR!r} or {AOD!r}, got {self.dimension!r}")
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.tolerance < 0.0:
            raise ValueError("tolerance must be nonnegative")
        if self.max_restarts < 1:
            raise ValueError("max_restarts must be positive")


@dataclass(frozen=True)
class SampledVariant:
    subgraph: SceneGraph
    achieved_ratio: float
    realized_caption: str


def default_sampling_targets(seed: int = 0) -> tuple[SamplingTarget, ...]:
    """The standard sweep: both dimensions at 20/40/60/80 percent."""
    return tuple(
        SamplingTarget(dimension=dim, ratio=ratio, seed=seed)
        for dim in (ICR, AOD)
        for ratio in DEFAULT_RATIOS
    )


def _pixel_bits(mask: RleMask) -> int:
    """Mask as an arbitrary-precision bitset for cheap unions and popcounts."""
    flat = rle_decode(mask).ravel(order="F")
    return int.from_bytes(np.packbits(flat).tobytes(), "big")


def _subset_union_bits(bits: dict[str, int], ids) -> int:
    acc = 0
    for oid in ids:
        acc |= bits[oid]
    return acc


def _greedy_icr_subset(
    ordered_ids: list[str],
    bits: dict[str, int],
    total_area: int,
    ratio: float,
    tolerance: float,
) -> list[str] | None:
    """One greedy pass: add objects that keep the running ratio at or below
    the window's upper edge, then accept if the result lands inside it."""
    hi = ratio + tolerance
    lo = ratio - tolerance
    running = 0
    chosen: list[str] = []
    for oid in ordered_ids:
        candidate = running | bits[oid]
        if candidate.bit_count() / total_area <= hi:
            running = candidate
            chosen.append(oid)
    if lo <= running.bit_count() / total_area <= hi:
        return chosen
    return None


def _randomized_icr_subset(
    ids: list[str],
    bits: dict[str, int],
    total_area: int,
    target: SamplingTarget,
    rng: random.Random,
) -> list[str] | None:
    for _ in range(target.max_restarts):
        order = rng.sample(ids, len(ids))
        chosen = _greedy_icr_subset(order, bits, total_area, target.ratio, target.tolerance)
        if chosen is not None:
            return chosen
    return None


def _exhaustive_icr_subset(
    ids: list[str],
    bits: dict[str, int],
    total_area: int,
    ratio: float,
    tolerance: float,
) -> list[str] | None:
    """Exact search over all object subsets; only used for small graphs.

    Deterministically prefers the subset whose ratio is closest to the
    target, breaking ties by smaller size then lexicographic ids.
    """
    n = len(ids)
    best: tuple[float, int, tuple[str, ...]] | None = None
    for pattern in range(1 << n):
        subset = tuple(ids[i] for i in range(n) if pattern >> i & 1)
        achieved = _subset_union_bits(bits, subset).bit_count() / total_area
        gap = abs(achieved - ratio)
        if gap > tolerance:
            continue
        key = (gap, len(subset), subset)
        if best is None or key < best:
            best = key
    return list(best[2]) if best is not None else None


def sample_icr_subgraph(
    g: SceneGraph,
    masks: dict[str, RleMask],
    image_height: int,
    image_width: int,
    target: SamplingTarget,
) -> SampledVariant:
    """Induce a sub-graph whose coverage is ``target.ratio`` of the full
    graph's coverage, within tolerance.

    Objects without masks contribute zero area. Raises UnreachableTargetError
    when no acceptable subset is found (exactly so for graphs of at most
    12 objects, best-effort beyond that).
    """
    if target.dimension != ICR:
        raise ValueError(f"target dimension is {target.dimension!r}, expected {ICR!r}")
    for oid, m in masks.items():
        if (m.height, m.width) != (image_height, image_width):
            raise DimensionMismatchError(
                f"mask for object {oid!r} is {m.height}x{m.width}, "
                f"image is {image_height}x{image_width}"
            )

    ids = [o.id for o in g.objects]
    bits = {oid: _pixel_bits(masks[oid]) if oid in masks else 0 for oid in ids}
    total_area = _subset_union_bits(bits, ids).bit_count()
    if total_area == 0:
        raise ZeroOriginalIcrError("original graph has zero mask coverage")

    rng = random.Random(target.seed)
    chosen = _randomized_icr_subset(ids, bits, total_area, target, rng)
    if chosen is None and len(ids) <= EXHAUSTIVE_LIMIT:
        chosen = _exhaustive_icr_subset(ids, bits, total_area, target.ratio, target.tolerance)
    if chosen is None:
        raise UnreachableTargetError(
            f"no object subset reaches coverage ratio {target.ratio} "
            f"(+/- {target.tolerance}) after {target.max_restarts} restarts"
        )

    achieved = _subset_union_bits(bits, chosen).bit_count() / total_area
    sub = induced_subgraph(g, chosen)
    return SampledVariant(
        subgraph=sub, achieved_ratio=achieved, realized_caption=realize_caption(sub)
    )


def sample_aod_subgraph(g: SceneGraph, target: SamplingTarget) -> SampledVariant:
    """Keep all objects and uniformly subsample the pooled attribute and
    relation edges down to ``round(ratio * total)`` of them."""
    if target.dimension != AOD:
        raise ValueError(f"target dimension is {target.dimension!r}, expected {AOD!r}")
    pool = [("attr", a.object_id, a.attribute) for a in g.attributes]
    pool += [("rel", r.subject_id, r.predicate, r.object_id) for r in g.relations]
    total = len(pool)
    if total == 0 or not g.objects:
        raise ZeroOriginalAodError("original graph has no attribute or relation edges")

    keep_n = int(np.floor(target.ratio * total + 0.5))
    keep_n = min(keep_n, total)
    achieved = keep_n / total
    if abs(achieved - target.ratio) > target.tolerance:
        raise UnreachableTargetError(
            f"nearest achievable edge count {keep_n}/{total} gives ratio "
            f"{achieved:.4f}, outside {target.ratio} +/- {target.tolerance}"
        )

    rng = random.Random(target.seed)
    kept = rng.sample(pool, keep_n)
    attributes = [(e[1], e[2]) for e in kept if e[0] == "attr"]
    relations = [(e[1], e[2], e[3]) for e in kept if e[0] == "rel"]
    sub = build_graph(
        [(o.id, o.label) for o in g.objects], attributes, relations
    )
    return SampledVariant(
        subgraph=sub, achieved_ratio=achieved, realized_caption=realize_caption(sub)
    )


def sample_subgraph(
    g: SceneGraph,
    target: SamplingTarget,
    masks: dict[str, RleMask] | None = None,
    image_height: int | None = None,
    image_width: int | None = None,
) -> SampledVariant:
    """Dispatch on the target dimension."""
    if target.dimension == ICR:
        if masks is None or image_height is None or image_width is None:
            raise ValueError("coverage sampling needs masks and image dimensions")
        return sample_icr_subgraph(g, masks, image_height, image_width, target)
    return sample_aod_subgraph(g, target)


_VOWELS = "aeiou"


def _article(word: str) -> str:
    return "an" if word[:1].lower() in _VOWELS else "a"


def realize_caption(g: SceneGraph) -> str:
    """Deterministic template realization.

    One sentence per object ("There is a red car.") with attributes in
    canonical order before the label, then one sentence per relation
    ("The car is near the tree."). Objects and relations follow the graph's
    canonical ordering, so equal graphs realize to identical text.
    """
    sentences = []
    for obj in g.objects:
        words = [a.attribute for a in g.attributes if a.object_id == obj.id]
        words.append(obj.label)
        sentences.append(f"There is {_article(words[0])} {' '.join(words)}.")
    for rel in g.relations:
        sentences.append(
            f"The {g.label_of(rel.subject_id)} is {rel.predicate} "
            f"the {g.label_of(rel.object_id)}."
        )
    return " ".join(sentences)


def parse_template_caption(
    text: str,
) -> tuple[list[str], list[tuple[str, str]], list[tuple[str, str, str]]]:
    """Exact inverse of :func:`realize_caption` for template-safe graphs
    (single-word labels; labels and predicates free of template keywords).

    Returns (object labels, (label, attribute) pairs, (subject label,
    predicate, object label) triples), all as multiset-style lists. Object
    ids are not recoverable from text.
    """
    labels: list[str] = []
    attributes: list[tuple[str, str]] = []
    relations: list[tuple[str, str, str]] = []
    text = text.strip()
    if not text:
        return labels, attributes, relations
    for raw in text.split(". "):
        sentence = raw.strip()
        if sentence.endswith("."):
            sentence = sentence[:-1]
        if not sentence:
            continue
        if sentence.startswith("There is "):
            rest = sentence[len("There is ") :]
            for art in ("an ", "a "):
                if rest.startswith(art):
                    rest = rest[len(art) :]
                    break
            words = rest.split()
            if not words:
                raise ValueError(f"unparseable object sentence: {raw!r}")
            labels.append(words[-1])
            attributes.extend((words[-1], w) for w in words[:-1])
        elif sentence.startswith("The ") and " is " in sentence:
            rest = sentence[len("The ") :]
            subject, predicate_part = rest.split(" is ", 1)
            if " the " not in predicate_part:
                raise ValueError(f"unparseable relation sentence: {raw!r}")
            predicate, obj = predicate_part.rsplit(" the ", 1)
            relations.append((subject, predicate, obj))
        else:
            raise ValueError(f"sentence does not match the template: {raw!r}")
    return labels, attributes, relations
