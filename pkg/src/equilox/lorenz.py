"""Decision-free Lorenz-curve and Gini analytics.

Given a vector of per-area demand coverages, these functions rank the values,
build the linearly interpolated cumulative-share curve, integrate the
trapezoids under it, and evaluate the inequity coefficient G, the
effectiveness U (total coverage) and the combined objective U * (1 - G).
All functions are pure and operate on immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EQ_TOL = 1e-9  # equality tolerance on unit-scaled quantities


class DegenerateInputError(ValueError):
    """Raised when the Gini coefficient is undefined (total coverage is 0)."""


@dataclass(frozen=True)
class CoverageVector:
    """Per-area demand coverages with parallel area labels."""

    values: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty coverage vector")
        if len(self.labels) != len(self.values):
            raise ValueError("labels and values must be parallel")
        if any(v < 0 for v in self.values):
            raise ValueError("coverages must be nonnegative")


@dataclass(frozen=True)
class LorenzCurve:
    """Ascending ranked coverages and their cumulative shares.

    ``cumulative_shares`` has n+1 entries, starting at 0 and (when the total
    is positive) ending at 1. For an all-zero input the curve is flagged
    ``degenerate`` and the shares are undefined (NaN).
    """

    n: int
    sorted_values: np.ndarray
    cumulative_shares: np.ndarray
    total: float
    sorted_labels: tuple[str, ...] = ()
    degenerate: bool = False

    def __post_init__(self):
        self.sorted_values.setflags(write=False)
        self.cumulative_shares.setflags(write=False)


@dataclass(frozen=True)
class GiniResult:
    gini: float
    effectiveness: float

    @property
    def objective(self) -> float:
        return self.effectiveness * (1.0 - self.gini)


def _as_coverage(c) -> CoverageVector:
    if isinstance(c, CoverageVector):
        return c
    values = tuple(float(v) for v in c)
    return CoverageVector(values=values, labels=tuple(str(i) for i in range(len(values))))


def rank_coverages(c: CoverageVector | Sequence[float]) -> LorenzCurve:
    """Stable ascending sort plus cumulative shares.

    Ties keep the order the areas were given in, so the ranking is
    deterministic (any tie permutation yields the same curve anyway).
    """
    cov = _as_coverage(c)
    values = np.asarray(cov.values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranked = values[order]
    total = float(ranked.sum())
    n = len(ranked)
    shares = np.empty(n + 1)
    shares[0] = 0.0
    if total > 0:
        np.cumsum(ranked / total, out=shares[1:])
        degenerate = False
    else:
        shares[1:] = np.nan
        degenerate = True
    return LorenzCurve(
        n=n,
        sorted_values=ranked,
        cumulative_shares=shares,
        total=total,
        sorted_labels=tuple(cov.labels[i] for i in order),
        degenerate=degenerate,
    )


def compute_gini(curve: LorenzCurve) -> GiniResult:
    """Gini coefficient by trapezoid integration of the ranked curve.

    G = 1 - (1/(n*U)) * [Z_1 + sum_{j>=2} (C_{j-1} + C_j)] with C_j the j-th
    prefix sum, i.e. twice the area between the equity line and the curve.
    """
    if curve.degenerate or not curve.total > 0:
        raise DegenerateInputError("Gini undefined for zero total coverage")
    z = curve.sorted_values
    csum = np.cumsum(z)
    inner = z[0] + float(csum[:-1].sum() + csum[1:].sum())
    gini = 1.0 - inner / (curve.n * curve.total)
    return GiniResult(gini=float(gini), effectiveness=curve.total)


def objective_closed_form(curve: LorenzCurve) -> float:
    """Effectiveness-times-equity objective as a weighted sum of ranks.

    Returns sum_j (1/n) * (2n + 1 - 2j) * Z_j, which equals U * (1 - G) and
    is well defined (0) for an all-zero vector.
    """
    n = curve.n
    j = np.arange(1, n + 1)
    weights = (2 * n + 1 - 2 * j) / n
    return float(weights @ curve.sorted_values)


def mean_difference_gini(
    c: CoverageVector | Sequence[float], proportions: Sequence[float]
) -> float:
    """Pairwise mean-difference inequity proxy used by the GMD benchmark.

    Returns (1/U) * sum_{a<a'} |p_a * cov_{a'} - p_{a'} * cov_a| where p are
    the per-area proportions of equity units (must sum to 1).
    """
    cov = _as_coverage(c)
    p = np.asarray(proportions, dtype=float)
    if p.shape != (len(cov.values),):
        raise ValueError("proportions must be parallel to the coverage vector")
    if abs(p.sum() - 1.0) > EQ_TOL:
        raise ValueError(f"proportions sum to {p.sum()!r}, not 1")
    values = np.asarray(cov.values, dtype=float)
    total = float(values.sum())
    if not total > 0:
        raise DegenerateInputError("mean-difference Gini undefined for zero total")
    diff = np.abs(np.outer(p, values) - np.outer(values, p))
    return float(np.triu(diff, k=1).sum()) / total


def curve_breakpoints_csv(curve: LorenzCurve) -> str:
    """Curve breakpoints as CSV text (percentile, cumulative share)."""
    lines = ["percentile,cumulative_share"]
    for j in range(curve.n + 1):
        share = float(curve.cumulative_shares[j])
        lines.append(f"{j / curve.n!r},{share!r}")
    return "\n".join(lines) + "\n"
