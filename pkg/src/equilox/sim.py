"""Out-of-sample evaluation of first-stage plans on sampled demand.

The pipeline: solve a formulation on the original scenarios, freeze its
(Y, P) plan, sample demand realizations cell-wise uniform between each
(item, area) pair's scenario minimum and maximum, re-solve the single-
scenario second stage per realization with the plan fixed, and score each
outcome by post-hoc effectiveness U* and Gini G*.

G* here is computed directly from the ranked-coverage formula (an explicit
loop over cumulative sums); the analytics module computes it independently,
and the test suite checks both paths agree to 1e-9 on every record.

Realizations that a solver fails on are flagged and excluded from all
averages; realizations with zero total coverage keep U* = 0 but have no
defined G* and are excluded from inequity averages only. Both counts are
disclosed in the summary.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import accumulate
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster import cluster_scenarios
from .instance import DemandTable, Instance, Scenario, demand_table_from_quantities
from .models import (
    FirstStage,
    ModelIR,
    add_valid_inequality,
    build_formulation,
    build_gini,
    build_ginic,
    build_gmd,
    build_sp,
    fix_first_stage,
    parse_indices,
)
from .solver import Solution, SolveParams, solve

FORMULATIONS = ("sp", "gmd", "gini", "ginic")
EVAL_TIME_LIMIT_S = 300.0  # per-realization cap; gaps are reported, not hidden
HIST_BIN_WIDTH = 0.02


@dataclass(frozen=True)
class Realization:
    """One sampled demand outcome, carried as a single-scenario demand table."""

    id: str
    demand: DemandTable

    @property
    def d(self) -> dict[tuple[str, str], float]:
        out = {}
        for ri, r in enumerate(self.demand.relief_ids):
            for ai, a in enumerate(self.demand.area_ids):
                out[(r, a)] = float(self.demand.d[ri, ai, 0])
        return out

    @property
    def u(self) -> dict[tuple[str, str], float]:
        out = {}
        for ri, r in enumerate(self.demand.relief_ids):
            for ai, a in enumerate(self.demand.area_ids):
                out[(r, a)] = float(self.demand.u[ri, ai, 0])
        return out

    @property
    def areas(self) -> tuple[str, ...]:
        return self.demand.positive_areas[self.id]


@dataclass(frozen=True)
class EvalRecord:
    formulation: str
    realization: str
    U_star: float
    G_star: float | None
    degenerate: bool
    coverage: Mapping[str, float]
    status: str
    gap: float
    wall_time_s: float

    @property
    def solved(self) -> bool:
        return self.status in ("optimal", "feasible_limit")


@dataclass(frozen=True)
class BenefitMatrix:
    """Pairwise relative change of a per-formulation average, in percent."""

    metric: str
    formulations: tuple[str, ...]
    delta: Mapping[str, float]
    cells: Mapping[tuple[str, str], float | None]
    counts: Mapping[str, int]
    excluded: Mapping[str, int]


def sample_realizations(
    demand: DemandTable,
    count: int,
    seed: int,
    continuous: bool = False,
) -> list[Realization]:
    """Sample ``count`` demand tables, cell-wise uniform over scenario ranges.

    Integer-uniform inclusive by default (demands are integers by
    construction); ``continuous`` switches to real-valued uniform draws. One
    RNG stream drives all draws, so a fixed seed pins the whole set; every
    formulation must be evaluated on the same set for paired comparisons.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    lo, hi = demand.demand_range()
    rng = np.random.default_rng(seed)
    out: list[Realization] = []
    for i in range(1, count + 1):
        rid = f"r{i:04d}"
        if continuous:
            draws = rng.uniform(lo, hi)
        else:
            draws = rng.integers(lo, hi, endpoint=True)
        table = demand_table_from_quantities(
            demand.relief_ids, demand.area_ids, (rid,), draws[:, :, None]
        )
        out.append(Realization(id=rid, demand=table))
    return out


def posthoc_gini(coverages: Sequence[float]) -> tuple[float | None, float, bool]:
    """(G*, U*, degenerate) from a coverage vector, by the ranked-sum formula.

    Sorts ascending, then G* = 1 - [Z_1 + sum_{j>=2}(C_{j-1} + C_j)] / (n U)
    with C_j the cumulative sum of the first j ranked coverages and
    U = sum of all coverages. U = 0 (or an empty vector) has no defined G*.
    """
    z = sorted(float(c) for c in coverages)
    n = len(z)
    total = math.fsum(z)
    if n == 0 or total <= 0.0:
        return None, max(total, 0.0), True
    cum = list(accumulate(z))
    inner = z[0]
    for j in range(2, n + 1):
        inner += cum[j - 2] + cum[j - 1]
    gini = 1.0 - inner / (n * total)
    return gini, total, False


def _single_scenario_view(inst: Instance, rid: str) -> Instance:
    """The instance with its scenario set replaced by one certain realization."""
    victims = {a: 0 for a in inst.area_ids}  # demand comes from the table
    return replace(
        inst,
        scenarios=(Scenario(id=rid, probability=1.0, victims=victims),),
        clusters_k=None,
        name=f"{inst.name}-{rid}",
    )


def _evaluation_model(
    formulation: str,
    view: Instance,
    table: DemandTable,
    own_recourse: bool,
    seed: int,
) -> ModelIR:
    if not own_recourse or formulation == "sp":
        return build_sp(view, table)
    if formulation == "gmd":
        return build_gmd(view, table)
    if formulation == "gini":
        model = build_gini(view, table)
        return add_valid_inequality(model, view, table)
    if formulation == "ginic":
        clusterings = cluster_scenarios(table, seed=seed)
        return build_ginic(view, table, clusterings)
    raise ValueError(f"unknown formulation {formulation!r}")


def _coverage_vector(
    values: Mapping[str, float], table: DemandTable
) -> dict[str, float]:
    """X^rank per area: sum_{r,n} u[r,a] X[r,a,n] on the realization's table."""
    r_idx = {r: i for i, r in enumerate(table.relief_ids)}
    a_idx = {a: i for i, a in enumerate(table.area_ids)}
    rid = table.scenario_ids[0]
    cov = {a: 0.0 for a in table.positive_areas[rid]}
    for name, value in values.items():
        if not name.startswith("X[") or not value:
            continue
        _, (r, a, n, s) = parse_indices(name)
        share = float(table.u[r_idx[r], a_idx[a], 0])
        if share and a in cov:
            cov[a] += share * float(value)
    return cov


def evaluate(
    formulation: str,
    inst: Instance,
    first_stage: FirstStage,
    realizations: Sequence[Realization],
    params: SolveParams | None = None,
    own_recourse: bool = True,
    seed: int = 0,
    solver_path: str | None = None,
    cache_dir: str | Path | None = None,
    jobs: int = 1,
) -> list[EvalRecord]:
    """Re-solve each realization's second stage under the fixed plan and score it.

    Every realization keeps the identical (Y, P); by default the model solved
    is the formulation's own recourse (``own_recourse=False`` forces the plain
    effectiveness objective for all formulations).
    """
    params = params or SolveParams(time_limit_s=EVAL_TIME_LIMIT_S)

    def run_one(r: Realization) -> EvalRecord:
        view = _single_scenario_view(inst, r.id)
        model = _evaluation_model(formulation, view, r.demand, own_recourse, seed)
        fixed = fix_first_stage(model, first_stage)
        sol = solve(fixed, params, solver_path=solver_path, cache_dir=cache_dir)
        if not sol.feasible:
            return EvalRecord(
                formulation=formulation,
                realization=r.id,
                U_star=math.nan,
                G_star=None,
                degenerate=False,
                coverage={},
                status=sol.status,
                gap=sol.gap,
                wall_time_s=sol.wall_time_s,
            )
        coverage = _coverage_vector(sol.values, r.demand)
        gini, total, degenerate = posthoc_gini(list(coverage.values()))
        return EvalRecord(
            formulation=formulation,
            realization=r.id,
            U_star=total,
            G_star=gini,
            degenerate=degenerate,
            coverage=coverage,
            status=sol.status,
            gap=sol.gap,
            wall_time_s=sol.wall_time_s,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_one, realizations))
    return [run_one(r) for r in realizations]


class PlanSolveError(RuntimeError):
    """A full-model solve produced no usable first-stage plan."""

    def __init__(self, formulation: str, solution: Solution):
        super().__init__(
            f"full solve of {formulation} produced no plan ({solution.status}); "
            f"diagnostics: {solution.diagnostics}"
        )
        self.formulation = formulation
        self.solution = solution


@dataclass(frozen=True)
class SimulationResult:
    formulations: tuple[str, ...]
    plans: Mapping[str, FirstStage]
    full_solutions: Mapping[str, Solution]
    realizations: tuple[Realization, ...]
    records: Mapping[str, tuple[EvalRecord, ...]]

    def all_records(self) -> list[EvalRecord]:
        return [rec for f in self.formulations for rec in self.records[f]]


def run_simulation(
    inst: Instance,
    demand: DemandTable,
    formulations: Sequence[str] = FORMULATIONS,
    count: int = 100,
    seed: int = 0,
    full_params: SolveParams | None = None,
    eval_params: SolveParams | None = None,
    own_recourse: bool = True,
    clusterings=None,
    valid_inequality: bool = True,
    continuous: bool = False,
    solver_path: str | None = None,
    cache_dir: str | Path | None = None,
    jobs: int = 1,
    echo=None,
) -> SimulationResult:
    """Full pipeline: solve every formulation, grade all plans on one
    shared realization set.

    Raises PlanSolveError as soon as a full solve yields no incumbent.
    ``echo``, if given, receives one progress line per step.
    """
    say = echo or (lambda line: None)
    chosen = tuple(formulations)
    full_params = full_params or SolveParams()
    plans: dict[str, FirstStage] = {}
    fulls: dict[str, Solution] = {}
    for name in chosen:
        model = build_formulation(
            name, inst, demand,
            clusterings=clusterings if name == "ginic" else None,
            valid_inequality=valid_inequality,
        )
        sol = solve(model, full_params, solver_path=solver_path, cache_dir=cache_dir)
        if not sol.feasible:
            raise PlanSolveError(name, sol)
        plans[name] = FirstStage.from_solution(sol.values)
        fulls[name] = sol
        gap = f"{sol.gap:.2%}" if math.isfinite(sol.gap) else "unknown"
        say(f"{name}: {sol.status}, objective {sol.objective:.6f}, "
            f"gap {gap}, {sol.wall_time_s:.1f}s, "
            f"{len(plans[name].open_facilities())} RFs")

    realizations = sample_realizations(demand, count, seed, continuous=continuous)
    say(f"evaluating {count} realizations x {len(chosen)} formulations")

    records: dict[str, tuple[EvalRecord, ...]] = {}
    for name in chosen:
        recs = evaluate(
            name, inst, plans[name], realizations,
            params=eval_params, own_recourse=own_recourse,
            seed=seed, solver_path=solver_path, cache_dir=cache_dir, jobs=jobs,
        )
        records[name] = tuple(recs)
        solved = [r for r in recs if r.solved]
        gs = [r.G_star for r in solved if not r.degenerate]
        us = [r.U_star for r in solved]
        mean_u = math.fsum(us) / len(us) if us else math.nan
        mean_g = math.fsum(gs) / len(gs) if gs else math.nan
        say(f"{name}: mean U* {mean_u:.4f}, mean G* {mean_g:.4f} "
            f"({len(solved)} solved, {len(recs) - len(solved)} failed, "
            f"{len(solved) - len(gs)} degenerate)")

    return SimulationResult(
        formulations=chosen,
        plans=plans,
        full_solutions=fulls,
        realizations=tuple(realizations),
        records=records,
    )


# -- aggregation --------------------------------------------------------------


def summary_stats(values: Sequence[float]) -> dict[str, float]:
    """Mean, sample standard deviation, CoV%% (sd/mean), extremes, count."""
    data = [float(v) for v in values]
    n = len(data)
    if n == 0:
        return {"mean": math.nan, "sd": math.nan, "cov_pct": math.nan,
                "min": math.nan, "max": math.nan, "n": 0}
    mean = math.fsum(data) / n
    if n > 1:
        var = math.fsum((x - mean) ** 2 for x in data) / (n - 1)
        sd = math.sqrt(var)
    else:
        sd = 0.0
    cov = (sd / mean * 100.0) if mean != 0.0 else 0.0
    return {"mean": mean, "sd": sd, "cov_pct": cov,
            "min": min(data), "max": max(data), "n": n}


def _metric_values(
    records: Sequence[EvalRecord], metric: str
) -> tuple[list[float], int]:
    """Values entering an average, plus how many records were excluded."""
    values: list[float] = []
    excluded = 0
    for rec in records:
        if not rec.solved:
            excluded += 1
            continue
        if metric == "inequity":
            if rec.degenerate or rec.G_star is None:
                excluded += 1
            else:
                values.append(rec.G_star)
        else:
            values.append(rec.U_star)
    return values, excluded


def benefit_matrix(
    records_by_formulation: Mapping[str, Sequence[EvalRecord]], metric: str
) -> BenefitMatrix:
    """Pairwise relative benefits ((column - row) / row * 100) of the averages.

    ``metric`` is ``inequity`` (average G*, degenerate records excluded) or
    ``effectiveness`` (average U*, degenerate included). Cells with a zero
    row average are undefined and reported as None; the diagonal is zero.
    """
    if metric not in ("inequity", "effectiveness"):
        raise ValueError(f"unknown metric {metric!r}")
    formulations = tuple(records_by_formulation)
    delta: dict[str, float] = {}
    counts: dict[str, int] = {}
    excluded: dict[str, int] = {}
    for f, records in records_by_formulation.items():
        values, dropped = _metric_values(records, metric)
        if not values:
            raise ValueError(f"{f}: no valid records for metric {metric}")
        delta[f] = math.fsum(values) / len(values)
        counts[f] = len(values)
        excluded[f] = dropped
    cells: dict[tuple[str, str], float | None] = {}
    for i in formulations:
        for j in formulations:
            if i == j:
                cells[(i, j)] = 0.0
            elif delta[i] == 0.0:
                cells[(i, j)] = None
            else:
                cells[(i, j)] = (delta[j] - delta[i]) / delta[i] * 100.0
    return BenefitMatrix(
        metric=metric,
        formulations=formulations,
        delta=delta,
        cells=cells,
        counts=counts,
        excluded=excluded,
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x:.10g}"
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _histogram_rows(records: Sequence[EvalRecord], metric: str):
    edges = np.arange(0.0, 1.0 + HIST_BIN_WIDTH / 2, HIST_BIN_WIDTH)
    by_formulation: dict[str, list[float]] = {}
    for rec in records:
        if not rec.solved:
            continue
        if metric == "gini":
            if rec.degenerate or rec.G_star is None:
                continue
            value = rec.G_star
        else:
            value = rec.U_star
        # solver tolerance can leave values a hair outside [0, 1]
        by_formulation.setdefault(rec.formulation, []).append(
            min(max(value, 0.0), 1.0)
        )
    rows = []
    for f, values in by_formulation.items():
        counts, _ = np.histogram(values, bins=edges)
        for k in range(len(counts)):
            rows.append((f, f"{edges[k]:.2f}", f"{edges[k + 1]:.2f}",
                         int(counts[k])))
    return rows


def summarize(
    records: Sequence[EvalRecord],
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write the report CSVs; returns the path of every file written.

    Files: scatter.csv (one row per record), hist_gini.csv / hist_eff.csv
    (0.02-wide bins over [0, 1]), summary.csv (per-formulation statistics
    with exclusion counts), benefit_inequity.csv / benefit_effectiveness.csv.
    """
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["scatter"] = directory / "scatter.csv"
    _write_csv(
        paths["scatter"],
        ["formulation", "realization", "U_star", "G_star", "degenerate",
         "status", "gap", "wall_time_s"],
        (
            (r.formulation, r.realization, r.U_star, r.G_star,
             int(r.degenerate), r.status, r.gap, r.wall_time_s)
            for r in records
        ),
    )

    paths["hist_gini"] = directory / "hist_gini.csv"
    _write_csv(paths["hist_gini"], ["formulation", "bin_lo", "bin_hi", "count"],
               _histogram_rows(records, "gini"))
    paths["hist_eff"] = directory / "hist_eff.csv"
    _write_csv(paths["hist_eff"], ["formulation", "bin_lo", "bin_hi", "count"],
               _histogram_rows(records, "eff"))

    by_formulation: dict[str, list[EvalRecord]] = {}
    for rec in records:
        by_formulation.setdefault(rec.formulation, []).append(rec)

    summary_rows = []
    for f, recs in by_formulation.items():
        for metric, label in (("effectiveness", "U_star"), ("inequity", "G_star")):
            values, dropped = _metric_values(recs, metric)
            stats = summary_stats(values)
            if label == "U_star":
                best, worst = stats["max"], stats["min"]
            else:
                best, worst = stats["min"], stats["max"]
            summary_rows.append(
                (f, label, stats["mean"], stats["sd"], stats["cov_pct"],
                 best, worst, stats["n"], dropped)
            )
    paths["summary"] = directory / "summary.csv"
    _write_csv(
        paths["summary"],
        ["formulation", "metric", "mean", "sd", "cov_pct", "best", "worst",
         "n", "n_excluded"],
        summary_rows,
    )

    for metric, fname in (("inequity", "benefit_inequity.csv"),
                          ("effectiveness", "benefit_effectiveness.csv")):
        key = fname[:-4]
        paths[key] = directory / fname
        if by_formulation:
            try:
                matrix = benefit_matrix(by_formulation, metric)
            except ValueError:
                _write_csv(paths[key], ["formulation"], [])
                continue
            header = ["formulation"] + list(matrix.formulations) + \
                ["average", "n", "n_excluded"]
            rows = []
            for i in matrix.formulations:
                rows.append(
                    [i]
                    + [matrix.cells[(i, j)] for j in matrix.formulations]
                    + [matrix.delta[i], matrix.counts[i], matrix.excluded[i]]
                )
            _write_csv(paths[key], header, rows)
        else:
            _write_csv(paths[key], ["formulation"], [])
    return paths
