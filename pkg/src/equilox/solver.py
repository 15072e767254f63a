"""Solver bridge with uniform status, gap and time-limit semantics.

Two backends solve a ModelIR:

* in-process (default): scipy's MILP interface, no external binary needed;
* subprocess: the model is written as free-form MPS and handed to an external
  solver executable (``--solver-path`` or the ``EQUILOX_SOLVER`` env var).
  Executables with ``cbc`` in their name are driven with cbc-style arguments
  and solution files; anything else is assumed to speak the highs-style
  command line and raw solution format.

The bridge never trusts solver output: objectives are recomputed from the
returned variable values and every accepted solution is re-checked by
:func:`verify_feasibility`. Solutions can be cached to disk keyed by the
model fingerprint and parameters, which makes long simulation runs
resumable; writes are atomic so concurrent workers are safe.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .modelio import write_mps
from .models import BINARY, ModelIR

FEAS_TOL = 1e-6
GAP_EPS = 1e-10  # keeps the gap defined at objective 0

OPTIMAL = "optimal"
FEASIBLE_LIMIT = "feasible_limit"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ERROR = "error"


@dataclass(frozen=True)
class SolveParams:
    time_limit_s: float = 3600.0
    rel_gap: float = 1e-5
    threads: int = 0  # 0 = backend default
    seed: int = 0
    lp_relaxation: bool = False

    def __post_init__(self):
        if self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be positive")
        if not 0.0 <= self.rel_gap < 1.0:
            raise ValueError("rel_gap must lie in [0, 1)")

    def to_json_dict(self) -> dict:
        return {
            "time_limit_s": self.time_limit_s,
            "rel_gap": self.rel_gap,
            "threads": self.threads,
            "seed": self.seed,
            "lp_relaxation": self.lp_relaxation,
        }


@dataclass(frozen=True)
class Solution:
    status: str
    values: Mapping[str, float]
    objective: float
    best_bound: float
    gap: float
    wall_time_s: float
    diagnostics: str = ""

    @property
    def feasible(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE_LIMIT)


def relative_gap(objective: float, best_bound: float) -> float:
    if math.isnan(objective) or math.isnan(best_bound):
        return math.nan
    return abs(objective - best_bound) / max(abs(objective), GAP_EPS)


def recompute_objective(model: ModelIR, values: Mapping[str, float]) -> float:
    return float(
        sum(coef * values.get(var, 0.0) for var, coef in model.objective.items())
    )


def verify_feasibility(model: ModelIR, values: Mapping[str, float]) -> list[str]:
    """All bound, integrality and constraint violations beyond tolerance.

    The tolerance is relative: a row or bound may be off by
    ``FEAS_TOL * max(1, |rhs|, |lhs|)``. An empty list means feasible.
    """
    violations: list[str] = []
    for var in model.variables.values():
        if var.name not in values:
            violations.append(f"{var.name}: no value")
            continue
        v = float(values[var.name])
        tol = FEAS_TOL * max(1.0, abs(var.lower), abs(var.upper) if
                             var.upper != math.inf else 0.0)
        if v < var.lower - tol:
            violations.append(f"{var.name} = {v} below lower bound {var.lower}")
        if v > var.upper + tol:
            violations.append(f"{var.name} = {v} above upper bound {var.upper}")
        if var.kind == BINARY and abs(v - round(v)) > FEAS_TOL:
            violations.append(f"{var.name} = {v} not integral")
    for con in model.constraints.values():
        lhs = 0.0
        for var, coef in con.terms:
            lhs += coef * float(values.get(var, 0.0))
        tol = FEAS_TOL * max(1.0, abs(con.rhs), abs(lhs))
        if con.comparator == "<=" and lhs > con.rhs + tol:
            violations.append(f"{con.name}: {lhs} > {con.rhs}")
        elif con.comparator == ">=" and lhs < con.rhs - tol:
            violations.append(f"{con.name}: {lhs} < {con.rhs}")
        elif con.comparator == "==" and abs(lhs - con.rhs) > tol:
            violations.append(f"{con.name}: {lhs} != {con.rhs}")
    return violations


# -- in-process backend --------------------------------------------------------

_SCIPY_STATUS = {0: OPTIMAL, 1: FEASIBLE_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}


def _solve_scipy(model: ModelIR, params: SolveParams):
    names = list(model.variables)
    index = {n: i for i, n in enumerate(names)}
    n = len(names)
    sign = -1.0 if model.sense == "max" else 1.0
    c = np.zeros(n)
    for var, coef in model.objective.items():
        c[index[var]] = sign * coef
    lower = np.array([v.lower for v in model.variables.values()])
    upper = np.array([v.upper for v in model.variables.values()])
    integrality = np.array(
        [1 if v.kind == BINARY else 0 for v in model.variables.values()]
    )

    constraints = []
    if model.constraints:
        data, rows, cols = [], [], []
        bl = np.empty(len(model.constraints))
        bu = np.empty(len(model.constraints))
        for ri, con in enumerate(model.constraints.values()):
            for var, coef in con.terms:
                rows.append(ri)
                cols.append(index[var])
                data.append(coef)
            if con.comparator == "<=":
                bl[ri], bu[ri] = -np.inf, con.rhs
            elif con.comparator == ">=":
                bl[ri], bu[ri] = con.rhs, np.inf
            else:
                bl[ri], bu[ri] = con.rhs, con.rhs
        matrix = sparse.csr_matrix(
            (data, (rows, cols)), shape=(len(model.constraints), n)
        )
        constraints = [LinearConstraint(matrix, bl, bu)]

    res = milp(
        c=c,
        constraints=constraints,
        integrality=integrality,
        bounds=Bounds(lower, upper),
        options={
            "disp": False,
            "time_limit": params.time_limit_s,
            "mip_rel_gap": params.rel_gap,
        },
    )

    status = _SCIPY_STATUS.get(res.status, ERROR)
    if res.x is None:
        if status in (OPTIMAL, FEASIBLE_LIMIT):
            status = ERROR
        return status, {}, math.nan, str(res.message)
    values = {name: float(res.x[i]) for i, name in enumerate(names)}
    bound = getattr(res, "mip_dual_bound", None)
    if bound is None or (isinstance(bound, float) and math.isnan(bound)):
        best_bound = math.nan if status == FEASIBLE_LIMIT else None
    else:
        best_bound = sign * float(bound)
    return status, values, best_bound, str(res.message)


# -- subprocess backend --------------------------------------------------------


def _parse_cbc_solution(text: str):
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        return ERROR, {}, "empty solution file"
    header = lines[0].strip()
    low = header.lower()
    if low.startswith("optimal"):
        status = OPTIMAL
    elif "infeasible" in low:
        status = INFEASIBLE
    elif "unbounded" in low:
        status = UNBOUNDED
    elif low.startswith("stopped"):
        status = FEASIBLE_LIMIT
    else:
        status = ERROR
    values: dict[str, float] = {}
    for line in lines[1:]:
        parts = line.replace("**", " ").split()
        if len(parts) >= 3 and parts[0].isdigit():
            try:
                values[parts[1]] = float(parts[2])
            except ValueError:
                continue
    return status, values, header


def _parse_highs_solution(text: str):
    lines = text.splitlines()
    status_text = ""
    values: dict[str, float] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.lower().startswith("model status"):
            _, _, tail = line.partition(":")
            status_text = tail.strip()
            if not status_text and i + 1 < len(lines):
                status_text = lines[i + 1].strip()
                i += 1
        elif line.startswith("# Columns"):
            count = int(line.split()[-1])
            for j in range(i + 1, i + 1 + count):
                parts = lines[j].split()
                if len(parts) >= 2:
                    values[parts[0]] = float(parts[1])
            i += count
        elif line.startswith("# Rows"):
            break
        i += 1
    low = status_text.lower()
    if "optimal" in low:
        status = OPTIMAL
    elif "infeasible" in low:
        status = INFEASIBLE
    elif "unbounded" in low:
        status = UNBOUNDED
    elif "limit" in low or "interrupt" in low:
        status = FEASIBLE_LIMIT if values else ERROR
    else:
        status = FEASIBLE_LIMIT if values else ERROR
    return status, values, status_text or "no model status in solution file"


def _solve_subprocess(model: ModelIR, params: SolveParams, solver_path: str):
    exe = Path(solver_path)
    flavor = "cbc" if "cbc" in exe.name.lower() else "highs"
    with tempfile.TemporaryDirectory(prefix="equilox-solve-") as tmp:
        mps_path = Path(tmp) / "model.mps"
        sol_path = Path(tmp) / "model.sol"
        mps_path.write_text(write_mps(model, form="free"), encoding="utf-8")
        if flavor == "cbc":
            cmd = [str(exe), str(mps_path),
                   "-seconds", str(params.time_limit_s),
                   "-ratioGap", str(params.rel_gap)]
            if params.threads > 0:
                cmd += ["-threads", str(params.threads)]
            if params.seed:
                cmd += ["-randomCbcSeed", str(params.seed)]
            cmd += ["solve", "solution", str(sol_path)]
        else:
            cmd = [str(exe),
                   "--time_limit", str(params.time_limit_s),
                   "--solution_file", str(sol_path)]
            if not params.lp_relaxation:
                cmd += ["--mip_rel_gap", str(params.rel_gap)]
            if params.seed:
                cmd += ["--random_seed", str(params.seed)]
            cmd.append(str(mps_path))
        try:
            proc = subprocess.run(
                cmd,
                capture_output=True,
                text=True,
                timeout=params.time_limit_s * 2 + 120,
            )
        except FileNotFoundError:
            return ERROR, {}, None, f"solver executable not found: {solver_path}"
        except subprocess.TimeoutExpired:
            return ERROR, {}, None, "solver process exceeded its watchdog timeout"
        tail = (proc.stdout or "")[-2000:] + (proc.stderr or "")[-2000:]
        if not sol_path.exists():
            return ERROR, {}, None, f"no solution file written; output tail: {tail}"
        text = sol_path.read_text(encoding="utf-8", errors="replace")
        if flavor == "cbc":
            status, values, note = _parse_cbc_solution(text)
        else:
            status, values, note = _parse_highs_solution(text)
        if proc.returncode != 0 and status == ERROR:
            note = f"exit code {proc.returncode}; {note}; output tail: {tail}"
        return status, values, None, note


# -- cache -----------------------------------------------------------------


def model_fingerprint(model: ModelIR, params: SolveParams, backend: str) -> str:
    body = write_mps(model, form="free").encode("utf-8")
    extra = json.dumps(
        {"params": params.to_json_dict(), "backend": backend}, sort_keys=True
    ).encode("utf-8")
    return hashlib.sha256(body + extra).hexdigest()


def _cache_path(cache_dir: str | Path, key: str) -> Path:
    return Path(cache_dir) / f"{key}.json"


def _cache_load(cache_dir: str | Path, key: str, model: ModelIR) -> "Solution | None":
    path = _cache_path(cache_dir, key)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if payload["status"] in (OPTIMAL, FEASIBLE_LIMIT):
        values = {name: 0.0 for name in model.variables}
        values.update({k: float(v) for k, v in payload["nonzero_values"].items()})
    else:
        values = {}
    def _f(x):
        return math.nan if x is None else float(x)
    return Solution(
        status=payload["status"],
        values=values,
        objective=_f(payload["objective"]),
        best_bound=_f(payload["best_bound"]),
        gap=_f(payload["gap"]),
        wall_time_s=float(payload["wall_time_s"]),
        diagnostics=payload.get("diagnostics", "") + " [cached]",
    )


def _cache_store(
    cache_dir: str | Path, key: str, solution: Solution, model_name: str,
    params: SolveParams,
) -> None:
    directory = Path(cache_dir)
    directory.mkdir(parents=True, exist_ok=True)
    def _n(x):
        return None if (isinstance(x, float) and math.isnan(x)) else x
    payload = {
        "model": model_name,
        "params": params.to_json_dict(),
        "status": solution.status,
        "objective": _n(solution.objective),
        "best_bound": _n(solution.best_bound),
        "gap": _n(solution.gap),
        "wall_time_s": solution.wall_time_s,
        "diagnostics": solution.diagnostics,
        "nonzero_values": {k: v for k, v in solution.values.items() if v != 0.0},
    }
    final = _cache_path(directory, key)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(payload, handle)
        os.replace(tmp, final)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# -- entry point -------------------------------------------------------------


def solve(
    model: ModelIR,
    params: SolveParams | None = None,
    *,
    solver_path: str | None = None,
    cache_dir: str | Path | None = None,
) -> Solution:
    """Solve a model and return a verified Solution.

    ``solver_path`` selects the subprocess backend (also honored from the
    ``EQUILOX_SOLVER`` environment variable); otherwise the in-process
    backend runs. With ``params.lp_relaxation`` every binary is relaxed to
    [lb, ub] before solving. ``cache_dir`` enables the on-disk solution
    cache. The in-process backend is single threaded and deterministic;
    ``threads`` and ``seed`` only reach external solvers.
    """
    params = params or SolveParams()
    solver_path = solver_path or os.environ.get("EQUILOX_SOLVER") or None
    effective = model.lp_relaxation() if params.lp_relaxation else model
    backend = f"subprocess:{Path(solver_path).name}" if solver_path else "scipy"

    key = None
    if cache_dir is not None:
        key = model_fingerprint(effective, params, backend)
        cached = _cache_load(cache_dir, key, effective)
        if cached is not None:
            return cached

    start = time.perf_counter()
    if solver_path:
        status, values, best_bound, note = _solve_subprocess(
            effective, params, solver_path
        )
    else:
        status, values, best_bound, note = _solve_scipy(effective, params)
    wall = time.perf_counter() - start

    if status in (OPTIMAL, FEASIBLE_LIMIT):
        full = {name: 0.0 for name in effective.variables}
        full.update(values)
        violations = verify_feasibility(effective, full)
        if violations:
            head = "; ".join(violations[:5])
            status = ERROR
            note = f"{note}; solution failed verification: {head}"
            solution = Solution(ERROR, full, math.nan, math.nan, math.nan, wall, note)
        else:
            objective = recompute_objective(effective, full)
            if status == OPTIMAL and best_bound is None:
                bound = objective
            elif best_bound is None:
                bound = math.nan
            else:
                bound = best_bound
            solution = Solution(
                status=status,
                values=full,
                objective=objective,
                best_bound=bound,
                gap=relative_gap(objective, bound),
                wall_time_s=wall,
                diagnostics=note,
            )
    else:
        solution = Solution(status, {}, math.nan, math.nan, math.nan, wall, note)

    if key is not None and solution.status != ERROR:
        _cache_store(cache_dir, key, solution, effective.name, params)
    return solution
