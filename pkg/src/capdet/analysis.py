"""Correlation and binned-curve analyses over scored datasets.

The Pearson coefficient uses the numerically stable two-pass form (means
first, then centered sums), which is reproducible across platforms. Binned
curves group records with comparable metric values into equal-width bins and
report the mean image-text matching score per bin, which is how the
relationship between detailness metrics and semantic correctness is
inspected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from capdet.errors import (
    EmptyInputError,
    InconsistentDimensionsError,
    LengthMismatchError,
    TooFewRatiosError,
    ZeroVarianceError,
)

DEFAULT_BINS = 10


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length sequences."""
    if len(xs) != len(ys):
        raise LengthMismatchError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n == 0:
        raise EmptyInputError("pearson needs at least two points")
    if n == 1:
        raise ZeroVarianceError("pearson is undefined for a single point")
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("an input has zero variance")
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    r = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class BinnedCurve:
    """Equal-width binning of a metric with mean ITM per bin.

    ``bin_means[i]`` is None for empty bins. The last bin is right-closed.
    """

    bin_edges: tuple[float, ...]
    bin_means: tuple[float | None, ...]
    bin_counts: tuple[int, ...]

    def centers(self) -> tuple[float, ...]:
        e = self.bin_edges
        return tuple((e[i] + e[i + 1]) / 2.0 for i in range(len(e) - 1))


def binned_mean(
    metric_values: Sequence[float], itm_values: Sequence[float], n_bins: int = DEFAULT_BINS
) -> BinnedCurve:
    """Mean ITM score per equal-width metric bin over [min, max].

    A degenerate metric range (all values equal) collapses to a single bin
    instead of erroring, so batch analytics stay robust.
    """
    if len(metric_values) != len(itm_values):
        raise LengthMismatchError(
            f"length mismatch: {len(metric_values)} vs {len(itm_values)}"
        )
    if not metric_values:
        raise EmptyInputError("binned_mean needs at least one record")
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")

    lo = min(metric_values)
    hi = max(metric_values)
    if hi == lo:
        mean = sum(itm_values) / len(itm_values)
        return BinnedCurve(
            bin_edges=(lo, hi), bin_means=(mean,), bin_counts=(len(itm_values),)
        )

    edges = tuple(lo + (hi - lo) * i / n_bins for i in range(n_bins + 1))
    sums = [0.0] * n_bins
    counts = [0] * n_bins
    scale = n_bins / (hi - lo)
    for m, y in zip(metric_values, itm_values):
        idx = int((m - lo) * scale)
        if idx >= n_bins:  # the maximum lands in the right-closed last bin
            idx = n_bins - 1
        sums[idx] += y
        counts[idx] += 1
    means = tuple(sums[i] / counts[i] if counts[i] else None for i in range(n_bins))
    return BinnedCurve(bin_edges=edges, bin_means=means, bin_counts=tuple(counts))


@dataclass(frozen=True)
class CorrelationTable:
    """Per-dimension correlation of scores against the sampled ratio.

    Dimensions whose scores have zero variance land in ``failures`` instead
    of ``coefficients``.
    """

    coefficients: Mapping[str, float]
    failures: Mapping[str, str]


def correlation_table(
    per_ratio_scores: Mapping[float, Mapping[str, float]]
) -> CorrelationTable:
    """One Pearson r per score dimension, pairing ratios with that
    dimension's scores across all rows."""
    if len(per_ratio_scores) < 2:
        raise TooFewRatiosError(
            f"need at least 2 ratios, got {len(per_ratio_scores)}"
        )
    ratios = sorted(per_ratio_scores)
    dims = sorted(per_ratio_scores[ratios[0]])
    for ratio in ratios:
        if sorted(per_ratio_scores[ratio]) != dims:
            raise InconsistentDimensionsError(
                f"row for ratio {ratio} has dimensions "
                f"{sorted(per_ratio_scores[ratio])}, expected {dims}"
            )
    coefficients: dict[str, float] = {}
    failures: dict[str, str] = {}
    for dim in dims:
        scores = [per_ratio_scores[ratio][dim] for ratio in ratios]
        try:
            coefficients[dim] = pearson(ratios, scores)
        except ZeroVarianceError as e:
            failures[dim] = str(e)
    return CorrelationTable(coefficients=coefficients, failures=failures)
