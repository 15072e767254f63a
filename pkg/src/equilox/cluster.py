"""Per-scenario k-means clustering of areas on total demand share.

The cluster-based ranking model ranks groups of areas instead of individual
areas; the groups come from 1-D k-means on the per-area feature
sum_r u[r, a, s]. Cluster counts are either user-supplied (the bundled case
study ships its published vector) or chosen by the elbow rule on the
within-cluster-sum-of-squares curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .instance import DemandTable

DEFAULT_RESTARTS = 10
DEFAULT_K_MAX = 8  # case-study k never exceeds 3; 8 leaves headroom


@dataclass(frozen=True)
class Clustering:
    """A partition of the positive-demand areas of one scenario.

    ``assignment`` maps each area id to a 1-based cluster index; clusters are
    numbered in ascending order of their centroid, so equal inputs yield
    equal numbering.
    """

    scenario: str
    k: int
    assignment: Mapping[str, int]
    wss_by_k: Mapping[int, float] = field(default_factory=dict)

    def members(self, w: int) -> tuple[str, ...]:
        return tuple(a for a, c in self.assignment.items() if c == w)

    def clusters(self) -> list[tuple[str, ...]]:
        return [self.members(w) for w in range(1, self.k + 1)]


def _kmeans_once(values: np.ndarray, k: int, rng: np.random.Generator):
    """One Lloyd run with k-means++ seeding; returns (labels, wss)."""
    n = len(values)
    centroids = np.empty(k)
    centroids[0] = values[rng.integers(n)]
    dist2 = (values - centroids[0]) ** 2
    for i in range(1, k):
        total = dist2.sum()
        if total > 0:
            probs = dist2 / total
            idx = rng.choice(n, p=probs)
        else:
            # all remaining points coincide with a centroid; spread over
            # distinct indices so every cluster can be seeded
            idx = rng.integers(n)
        centroids[i] = values[idx]
        dist2 = np.minimum(dist2, (values - centroids[i]) ** 2)

    labels = np.zeros(n, dtype=int)
    for _ in range(300):
        d2 = (values[:, None] - centroids[None, :]) ** 2
        new_labels = np.argmin(d2, axis=1)
        # repair empty clusters: steal the farthest point from a cluster
        # that can spare one (never a singleton, which would just move
        # the hole elsewhere)
        for c in range(k):
            if not (new_labels == c).any():
                counts = np.bincount(new_labels, minlength=k)
                cand = np.where(counts[new_labels] > 1)[0]
                worst = int(cand[np.argmax(d2[cand, new_labels[cand]])])
                new_labels[worst] = c
                d2[worst, :] = np.inf
                d2[worst, c] = 0.0
        if (new_labels == labels).all() and _ > 0:
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = values[labels == c].mean()
    wss = float(((values - centroids[labels]) ** 2).sum())
    return labels, centroids, wss


def kmeans(
    points: Sequence[float],
    k: int,
    seed: int,
    labels: Sequence[str] | None = None,
    scenario: str = "",
    restarts: int = DEFAULT_RESTARTS,
) -> Clustering:
    """Best-of-``restarts`` Lloyd's k-means on 1-D points.

    Deterministic under a fixed (points, k, seed); the best run by WSS wins,
    ties going to the earliest run.
    """
    values = np.asarray(points, dtype=float)
    n = len(values)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if labels is None:
        labels = [str(i) for i in range(n)]
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        run_labels, centroids, wss = _kmeans_once(values, k, rng)
        if best is None or wss < best[2] - 1e-15:
            best = (run_labels, centroids, wss)
    run_labels, centroids, wss = best

    # renumber clusters 1..k by ascending centroid
    order = np.argsort(centroids, kind="stable")
    rank = {int(c): w + 1 for w, c in enumerate(order)}
    assignment = {str(a): rank[int(c)] for a, c in zip(labels, run_labels)}
    return Clustering(
        scenario=scenario, k=k, assignment=assignment, wss_by_k={k: wss}
    )


def wss_curve(
    points: Sequence[float], k_max: int, seed: int, restarts: int = DEFAULT_RESTARTS
) -> dict[int, float]:
    """WSS for k = 1..k_max, each the best of ``restarts`` runs."""
    values = np.asarray(points, dtype=float)
    out: dict[int, float] = {}
    for k in range(1, k_max + 1):
        out[k] = kmeans(values, k, seed, restarts=restarts).wss_by_k[k]
    return out


def elbow_select_k(
    points: Sequence[float], k_max: int, seed: int, restarts: int = DEFAULT_RESTARTS
) -> int:
    """Elbow rule: the k maximizing the second difference of the WSS curve.

    Candidates are k in [2, k_max - 1]; with two or fewer points, or when a
    single cluster already has zero WSS, k = 1.
    """
    values = np.asarray(points, dtype=float)
    n = len(values)
    if k_max > n:
        raise ValueError(f"k_max={k_max} exceeds point count {n}")
    if n <= 2:
        return 1
    wss = wss_curve(values, k_max, seed, restarts=restarts)
    if wss[1] <= 0.0:
        return 1
    best_k, best_curv = 1, -np.inf
    for k in range(2, k_max):
        curv = wss[k - 1] - 2.0 * wss[k] + wss[k + 1]
        if curv > best_curv + 1e-15:
            best_k, best_curv = k, curv
    return best_k


def singleton_clustering(area_ids: Sequence[str], scenario: str = "") -> Clustering:
    """One area per cluster, in the given order (k = |A_s|)."""
    assignment = {str(a): i + 1 for i, a in enumerate(area_ids)}
    return Clustering(scenario=scenario, k=len(assignment), assignment=assignment)


def cluster_scenarios(
    demand: DemandTable,
    seed: int,
    k_per_scenario: Sequence[int] | None = None,
    k_max: int = DEFAULT_K_MAX,
    restarts: int = DEFAULT_RESTARTS,
) -> dict[str, Clustering]:
    """Cluster every positive-demand scenario on its coverage-share feature.

    The feature for area a is sum_r u[r, a, s]. ``k_per_scenario`` (one entry
    per scenario, in scenario order) overrides elbow selection; scenarios with
    no positive-demand areas are skipped.
    """
    if k_per_scenario is not None and len(k_per_scenario) != len(demand.scenario_ids):
        raise ValueError(
            f"k_per_scenario has {len(k_per_scenario)} entries for "
            f"{len(demand.scenario_ids)} scenarios"
        )
    out: dict[str, Clustering] = {}
    shares = demand.u.sum(axis=0)  # (A, S)
    for si, sid in enumerate(demand.scenario_ids):
        areas = demand.positive_areas[sid]
        if not areas:
            continue
        cols = [demand.area_ids.index(a) for a in areas]
        feature = shares[cols, si]
        if k_per_scenario is not None:
            k = int(k_per_scenario[si])
            if not 1 <= k <= len(areas):
                raise ValueError(
                    f"scenario {sid}: k={k} outside [1, {len(areas)}]"
                )
        else:
            k = elbow_select_k(feature, min(k_max, len(areas)), seed,
                               restarts=restarts)
        out[sid] = kmeans(feature, k, seed, labels=areas, scenario=sid,
                          restarts=restarts)
    return out
