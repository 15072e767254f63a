"""Deterministic-equivalent MILP builders for the four formulations.

All four models share the first-stage siting and prepositioning block plus
the per-scenario allocation block; they differ in how the objective rewards
coverage:

* ``sp``    expected coverage only
* ``gmd``   expected coverage minus the pairwise mean absolute difference
* ``gini``  rank-linearized Lorenz objective (coverage times one minus Gini)
* ``ginic`` the same rank objective over clusters of areas

Variable naming is stable so solutions are diffable across runs and solvers:
``Y[size,location]``, ``P[item,location]``, ``X[item,area,location,scenario]``,
``O[entity,rank,scenario]`` (entity is an area id for gini and a 1-based
cluster index for ginic), ``Z[rank,scenario]``, ``t[area,area2,scenario]``,
``HL[scenario]``, ``HU[scenario]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from . import lorenz
from .cluster import Clustering
from .instance import DemandTable, Instance, derive_shipping_costs

INF = math.inf

CONTINUOUS = "continuous"
BINARY = "binary"

COMPARATORS = ("<=", ">=", "==")

_RESERVED_CHARS = set("[],:; \t\r\n")


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str = CONTINUOUS
    lower: float = 0.0
    upper: float = INF


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[str, float], ...]
    comparator: str
    rhs: float


class ModelIR:
    """Solver-agnostic linear model: named variables, constraints, objective.

    Insertion order is preserved everywhere, which keeps emitted files and
    solver column order byte-stable for identical inputs. Builders freeze the
    model before returning it; use :meth:`copy` to derive a modified one.
    """

    def __init__(self, name: str, sense: str = "max"):
        if sense not in ("max", "min"):
            raise ValueError(f"unknown sense {sense!r}")
        self.name = name
        self.sense = sense
        self.variables: dict[str, Variable] = {}
        self.constraints: dict[str, Constraint] = {}
        self.objective: dict[str, float] = {}
        self.meta: dict = {}
        self._frozen = False

    # -- construction -------------------------------------------------------

    def add_variable(
        self,
        name: str,
        kind: str = CONTINUOUS,
        lower: float = 0.0,
        upper: float = INF,
    ) -> str:
        self._check_mutable()
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        if lower > upper:
            raise ValueError(f"{name}: lower {lower} > upper {upper}")
        self.variables[name] = Variable(name, kind, float(lower), float(upper))
        return name

    def add_constraint(
        self,
        name: str,
        terms: Mapping[str, float] | Iterable[tuple[str, float]],
        comparator: str,
        rhs: float,
    ) -> str:
        self._check_mutable()
        if comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {comparator!r}")
        if name in self.constraints:
            raise ValueError(f"duplicate constraint {name!r}")
        merged: dict[str, float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for var, coef in items:
            if var not in self.variables:
                raise ValueError(f"constraint {name!r} references unknown {var!r}")
            merged[var] = merged.get(var, 0.0) + float(coef)
        packed = tuple((v, c) for v, c in merged.items() if c != 0.0)
        self.constraints[name] = Constraint(name, packed, comparator, float(rhs))
        return name

    def add_objective_term(self, var: str, coef: float) -> None:
        self._check_mutable()
        if var not in self.variables:
            raise ValueError(f"objective references unknown {var!r}")
        value = self.objective.get(var, 0.0) + float(coef)
        if value == 0.0:
            self.objective.pop(var, None)
        else:
            self.objective[var] = value

    def freeze(self) -> "ModelIR":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_mutable(self) -> None:
        if self._frozen:
            raise RuntimeError("model is frozen; use copy() to derive a new one")

    # -- derivation ---------------------------------------------------------

    def copy(self, name: str | None = None) -> "ModelIR":
        dup = ModelIR(name or self.name, self.sense)
        dup.variables = dict(self.variables)
        dup.constraints = dict(self.constraints)
        dup.objective = dict(self.objective)
        dup.meta = dict(self.meta)
        return dup

    def lp_relaxation(self) -> "ModelIR":
        """Copy with every binary variable relaxed to a continuous [lb, ub]."""
        dup = self.copy()
        for name, var in dup.variables.items():
            if var.kind == BINARY:
                dup.variables[name] = replace(var, kind=CONTINUOUS)
        dup.meta["lp_relaxation"] = True
        return dup.freeze()

    # -- introspection ------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def binary_names(self) -> list[str]:
        return [v.name for v in self.variables.values() if v.kind == BINARY]

    def stats(self) -> dict:
        nnz = sum(len(c.terms) for c in self.constraints.values())
        return {
            "name": self.name,
            "sense": self.sense,
            "variables": self.num_variables,
            "binaries": len(self.binary_names()),
            "constraints": self.num_constraints,
            "nonzeros": nnz,
            "objective_terms": len(self.objective),
        }


# -- naming ------------------------------------------------------------------


def vname(base: str, *indices) -> str:
    return f"{base}[{','.join(str(i) for i in indices)}]"


def parse_indices(name: str) -> tuple[str, tuple[str, ...]]:
    """Split ``base[i,j,...]`` into (base, indices)."""
    head, sep, rest = name.partition("[")
    if not sep or not rest.endswith("]"):
        raise ValueError(f"not an indexed name: {name!r}")
    return head, tuple(rest[:-1].split(","))


def _check_ids(inst: Instance) -> None:
    ids = list(inst.area_ids) + list(inst.relief_ids) + list(inst.scenario_ids)
    ids += [opt.size for opt in inst.facility_options]
    for raw in ids:
        if not raw or _RESERVED_CHARS.intersection(raw):
            raise ValueError(
                f"id {raw!r} not usable in variable names "
                "(whitespace, commas, brackets and colons are reserved)"
            )


# -- first/second stage views -------------------------------------------------


@dataclass(frozen=True)
class FirstStage:
    """A siting/prepositioning plan: Y[(size, location)] and P[(item, location)]."""

    Y: Mapping[tuple[str, str], int]
    P: Mapping[tuple[str, str], float]

    @classmethod
    def from_solution(cls, values: Mapping[str, float]) -> "FirstStage":
        y: dict[tuple[str, str], int] = {}
        p: dict[tuple[str, str], float] = {}
        for name, value in values.items():
            if name.startswith("Y["):
                _, (size, loc) = parse_indices(name)
                y[(size, loc)] = int(round(value))
            elif name.startswith("P["):
                _, (item, loc) = parse_indices(name)
                p[(item, loc)] = max(0.0, float(value))
        return cls(Y=y, P=p)

    def open_facilities(self) -> list[tuple[str, str]]:
        return [key for key, v in self.Y.items() if v >= 1]

    def validate(self, inst: Instance) -> list[str]:
        """Check the plan against the first-stage constraints; returns findings."""
        findings: list[str] = []
        per_loc: dict[str, int] = {}
        for (size, loc), v in self.Y.items():
            if v not in (0, 1):
                findings.append(f"Y[{size},{loc}] = {v} is not binary")
            per_loc[loc] = per_loc.get(loc, 0) + v
        for loc, count in per_loc.items():
            if count > 1:
                findings.append(f"location {loc} hosts {count} facility sizes")
        cap: dict[str, float] = {}
        for opt in inst.facility_options:
            if self.Y.get((opt.size, opt.location), 0) >= 1:
                cap[opt.location] = cap.get(opt.location, 0.0) + opt.capacity_m3
        used: dict[str, float] = {}
        spend = 0.0
        for (item_id, loc), qty in self.P.items():
            if qty < -1e-9:
                findings.append(f"P[{item_id},{loc}] = {qty} negative")
            item = inst.relief_item(item_id)
            used[loc] = used.get(loc, 0.0) + item.volume_m3 * qty
            spend += item.prep_cost(loc) * qty
        for loc, volume in used.items():
            if volume > cap.get(loc, 0.0) + 1e-6:
                findings.append(
                    f"stored volume {volume:.6g} exceeds capacity "
                    f"{cap.get(loc, 0.0):.6g} at {loc}"
                )
        for item in inst.relief_items:
            total = sum(q for (rid, _), q in self.P.items() if rid == item.id)
            if total > item.max_preposition + 1e-6:
                findings.append(
                    f"{item.id}: prepositioned {total:.6g} exceeds cap "
                    f"{item.max_preposition}"
                )
        theta = inst.min_preposition
        for loc in {loc for (_, loc) in self.Y}:
            opened = per_loc.get(loc, 0)
            stored = sum(q for (_, l2), q in self.P.items() if l2 == loc)
            if stored + 1e-9 < theta * opened:
                findings.append(
                    f"location {loc}: stored {stored:.6g} below minimum "
                    f"{theta * opened:.6g}"
                )
        for opt in inst.facility_options:
            spend += opt.fixed_cost * self.Y.get((opt.size, opt.location), 0)
        if spend > inst.budget_first_stage + 1e-6:
            findings.append(
                f"first-stage spend {spend:.6g} exceeds budget "
                f"{inst.budget_first_stage:.6g}"
            )
        return findings

    def to_json_dict(self) -> dict:
        return {
            "Y": {f"{size},{loc}": int(v) for (size, loc), v in self.Y.items()},
            "P": {f"{item},{loc}": float(v) for (item, loc), v in self.P.items()},
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "FirstStage":
        y = {tuple(k.split(",")): int(v) for k, v in payload["Y"].items()}
        p = {tuple(k.split(",")): float(v) for k, v in payload["P"].items()}
        return cls(Y=y, P=p)


@dataclass(frozen=True)
class SecondStage:
    """Typed view of recourse variables pulled out of a solution vector."""

    X: Mapping[tuple[str, str, str, str], float]
    O: Mapping[tuple[str, int, str], float]
    Z: Mapping[tuple[int, str], float]
    H_L: Mapping[str, float]
    H_U: Mapping[str, float]
    t: Mapping[tuple[str, str, str], float]


def second_stage_from_solution(values: Mapping[str, float]) -> SecondStage:
    x: dict = {}
    o: dict = {}
    z: dict = {}
    hl: dict = {}
    hu: dict = {}
    tv: dict = {}
    for name, value in values.items():
        if name.startswith("X["):
            _, (r, a, n, s) = parse_indices(name)
            x[(r, a, n, s)] = float(value)
        elif name.startswith("O["):
            _, (entity, j, s) = parse_indices(name)
            o[(entity, int(j), s)] = float(value)
        elif name.startswith("Z["):
            _, (j, s) = parse_indices(name)
            z[(int(j), s)] = float(value)
        elif name.startswith("HL["):
            _, (s,) = parse_indices(name)
            hl[s] = float(value)
        elif name.startswith("HU["):
            _, (s,) = parse_indices(name)
            hu[s] = float(value)
        elif name.startswith("t["):
            _, (a, a2, s) = parse_indices(name)
            tv[(a, a2, s)] = float(value)
    return SecondStage(X=x, O=o, Z=z, H_L=hl, H_U=hu, t=tv)


# -- shared building blocks ----------------------------------------------------


def build_common(inst: Instance, demand: DemandTable) -> ModelIR:
    """Variables Y/P/X plus every constraint shared by all formulations.

    Families: storage[n] links stored volume to opened capacity; maxprep[r]
    caps total prepositioning per item; minprep[n] forces a minimum stock at
    any opened location; onesize[n] admits one facility size per location;
    budget1 is the first-stage budget; stock[r,n,s] caps shipped quantity by
    prepositioned stock; alloc[r,a,s] caps the allocated fraction at one;
    budget2[s] is the per-scenario shipping budget.
    """
    _check_ids(inst)
    m = ModelIR(inst.name, sense="max")
    m.meta = {"instance": inst.name, "formulation": "common"}

    relief = inst.relief_items
    areas = inst.area_ids
    locations = inst.locations
    scenarios = inst.scenario_ids
    ship = derive_shipping_costs(inst)

    for opt in inst.facility_options:
        m.add_variable(vname("Y", opt.size, opt.location), BINARY, 0.0, 1.0)
    for item in relief:
        for n in locations:
            m.add_variable(vname("P", item.id, n), CONTINUOUS, 0.0, INF)
    for item in relief:
        for a in areas:
            for n in locations:
                for s in scenarios:
                    m.add_variable(vname("X", item.id, a, n, s), CONTINUOUS, 0.0, 1.0)

    opts_at: dict[str, list] = {n: [] for n in locations}
    for opt in inst.facility_options:
        opts_at.setdefault(opt.location, []).append(opt)

    for n in locations:
        terms: dict[str, float] = {}
        for item in relief:
            terms[vname("P", item.id, n)] = item.volume_m3
        for opt in opts_at[n]:
            terms[vname("Y", opt.size, opt.location)] = -opt.capacity_m3
        m.add_constraint(vname("storage", n), terms, "<=", 0.0)

    for item in relief:
        terms = {vname("P", item.id, n): 1.0 for n in locations}
        m.add_constraint(vname("maxprep", item.id), terms, "<=",
                         float(item.max_preposition))

    theta = float(inst.min_preposition)
    for n in locations:
        terms = {vname("P", item.id, n): 1.0 for item in relief}
        for opt in opts_at[n]:
            terms[vname("Y", opt.size, opt.location)] = -theta
        m.add_constraint(vname("minprep", n), terms, ">=", 0.0)

    for n in locations:
        terms = {vname("Y", opt.size, opt.location): 1.0 for opt in opts_at[n]}
        if terms:
            m.add_constraint(vname("onesize", n), terms, "<=", 1.0)

    budget_terms: dict[str, float] = {}
    for item in relief:
        for n in locations:
            budget_terms[vname("P", item.id, n)] = item.prep_cost(n)
    for opt in inst.facility_options:
        budget_terms[vname("Y", opt.size, opt.location)] = opt.fixed_cost
    m.add_constraint("budget1", budget_terms, "<=", inst.budget_first_stage)

    d = demand.d
    for ri, item in enumerate(relief):
        for n in locations:
            pvar = vname("P", item.id, n)
            for si, s in enumerate(scenarios):
                terms = {pvar: -1.0}
                for ai, a in enumerate(areas):
                    qty = float(d[ri, ai, si])
                    if qty:
                        terms[vname("X", item.id, a, n, s)] = qty
                m.add_constraint(vname("stock", item.id, n, s), terms, "<=", 0.0)

    for item in relief:
        for a in areas:
            for si, s in enumerate(scenarios):
                terms = {vname("X", item.id, a, n, s): 1.0 for n in locations}
                m.add_constraint(vname("alloc", item.id, a, s), terms, "<=", 1.0)

    kv = inst.vehicle.capacity_m3
    loc_idx = {n: inst.area_index(n) for n in locations}
    for si, s in enumerate(scenarios):
        terms = {}
        for ri, item in enumerate(relief):
            per_unit = item.volume_m3 / kv
            for ai, a in enumerate(areas):
                qty = float(d[ri, ai, si])
                if not qty:
                    continue
                for n in locations:
                    cost = ship[ai, loc_idx[n]] * per_unit * qty
                    if cost:
                        terms[vname("X", item.id, a, n, s)] = cost
        m.add_constraint(vname("budget2", s), terms, "<=", inst.budget_second_stage)

    return m


def _coverage_terms(
    demand: DemandTable, inst: Instance, area: str, scenario: str
) -> dict[str, float]:
    """Terms of the coverage expression sum_{r,n} u[r,a,s] X[r,a,n,s]."""
    out: dict[str, float] = {}
    ai = demand.area_ids.index(area)
    si = demand.scenario_column(scenario)
    for ri, r in enumerate(demand.relief_ids):
        share = float(demand.u[ri, ai, si])
        if share:
            for n in inst.locations:
                out[vname("X", r, area, n, scenario)] = share
    return out


def _add_coverage_objective(m: ModelIR, inst: Instance, demand: DemandTable) -> None:
    for si, scen in enumerate(inst.scenarios):
        for ai, a in enumerate(demand.area_ids):
            for ri, r in enumerate(demand.relief_ids):
                share = float(demand.u[ri, ai, si])
                if not share:
                    continue
                for n in inst.locations:
                    m.add_objective_term(vname("X", r, a, n, scen.id),
                                         scen.probability * share)


# -- formulations --------------------------------------------------------------


def build_sp(inst: Instance, demand: DemandTable) -> ModelIR:
    """Effectiveness-only model: maximize expected total demand coverage."""
    m = build_common(inst, demand)
    _add_coverage_objective(m, inst, demand)
    m.name = f"{inst.name}-sp"
    m.meta["formulation"] = "sp"
    return m.freeze()


@dataclass(frozen=True)
class GmdProportions:
    """Per-(area, scenario) proportion of equity units available."""

    rho: Mapping[tuple[str, str], float]


def gmd_proportions(demand: DemandTable) -> GmdProportions:
    rho: dict[tuple[str, str], float] = {}
    for si, s in enumerate(demand.scenario_ids):
        total = float(demand.u[:, :, si].sum())
        for ai, a in enumerate(demand.area_ids):
            num = float(demand.u[:, ai, si].sum())
            rho[(a, s)] = num / total if total > 0 else 0.0
    return GmdProportions(rho=rho)


def build_gmd(inst: Instance, demand: DemandTable) -> ModelIR:
    """Mean-difference model: coverage minus pairwise weighted absolute gaps.

    For each unordered area pair a < a2 and scenario s, t[a,a2,s] dominates
    |rho[a,s]*coverage(a2,s) - rho[a2,s]*coverage(a,s)| through the usual two
    linear inequalities, and the objective subtracts the t variables.
    """
    m = build_common(inst, demand)
    rho = gmd_proportions(demand).rho
    areas = inst.area_ids
    for s in inst.scenario_ids:
        for i, a in enumerate(areas):
            for a2 in areas[i + 1:]:
                m.add_variable(vname("t", a, a2, s), CONTINUOUS, 0.0, INF)

    cov_cache: dict[tuple[str, str], dict[str, float]] = {}

    def cov(a: str, s: str) -> dict[str, float]:
        key = (a, s)
        if key not in cov_cache:
            cov_cache[key] = _coverage_terms(demand, inst, a, s)
        return cov_cache[key]

    for s in inst.scenario_ids:
        for i, a in enumerate(areas):
            for a2 in areas[i + 1:]:
                tvar = vname("t", a, a2, s)
                lhs: dict[str, float] = {tvar: 1.0}
                for x, u in cov(a2, s).items():
                    lhs[x] = lhs.get(x, 0.0) - rho[(a, s)] * u
                for x, u in cov(a, s).items():
                    lhs[x] = lhs.get(x, 0.0) + rho[(a2, s)] * u
                m.add_constraint(vname("absp", a, a2, s), lhs, ">=", 0.0)
                lhs = {tvar: 1.0}
                for x, u in cov(a2, s).items():
                    lhs[x] = lhs.get(x, 0.0) + rho[(a, s)] * u
                for x, u in cov(a, s).items():
                    lhs[x] = lhs.get(x, 0.0) - rho[(a2, s)] * u
                m.add_constraint(vname("absm", a, a2, s), lhs, ">=", 0.0)

    _add_coverage_objective(m, inst, demand)
    for scen in inst.scenarios:
        for i, a in enumerate(areas):
            for a2 in areas[i + 1:]:
                m.add_objective_term(vname("t", a, a2, scen.id), -scen.probability)
    m.name = f"{inst.name}-gmd"
    m.meta["formulation"] = "gmd"
    return m.freeze()


def _add_rank_block(
    m: ModelIR,
    scenario_id: str,
    probability: float,
    entities: Sequence[str],
    coverage_terms: Mapping[str, Mapping[str, float]],
) -> None:
    """Rank-assignment linearization shared by the area and cluster models.

    ``entities`` are the rank contenders (area ids or cluster indices) and
    ``coverage_terms[e]`` the linear expression of entity e's coverage. Adds
    O/Z variables, the two assignment families, the linearization pair, the
    monotone chain, and the objective coefficients (2k+1-2j)/k weighted by
    the scenario probability.
    """
    k = len(entities)
    s = scenario_id
    for e in entities:
        for j in range(1, k + 1):
            m.add_variable(vname("O", e, j, s), BINARY, 0.0, 1.0)
    for j in range(1, k + 1):
        m.add_variable(vname("Z", j, s), CONTINUOUS, 0.0, 1.0)

    for e in entities:
        terms = {vname("O", e, j, s): 1.0 for j in range(1, k + 1)}
        m.add_constraint(vname("rank_area", e, s), terms, "==", 1.0)
    for j in range(1, k + 1):
        terms = {vname("O", e, j, s): 1.0 for e in entities}
        m.add_constraint(vname("rank_slot", j, s), terms, "==", 1.0)

    for e in entities:
        cov = coverage_terms[e]
        for j in range(1, k + 1):
            zvar = vname("Z", j, s)
            ovar = vname("O", e, j, s)
            upper: dict[str, float] = {zvar: 1.0, ovar: 1.0}
            for x, u in cov.items():
                upper[x] = upper.get(x, 0.0) - u
            m.add_constraint(vname("zub", e, j, s), upper, "<=", 1.0)
            lower: dict[str, float] = {zvar: 1.0, ovar: -1.0}
            for x, u in cov.items():
                lower[x] = lower.get(x, 0.0) - u
            m.add_constraint(vname("zlb", e, j, s), lower, ">=", -1.0)

    for j in range(1, k):
        m.add_constraint(
            vname("chain", j, s),
            {vname("Z", j, s): 1.0, vname("Z", j + 1, s): -1.0},
            "<=",
            0.0,
        )

    for j in range(1, k + 1):
        weight = (2.0 * k + 1.0 - 2.0 * j) / k
        m.add_objective_term(vname("Z", j, s), probability * weight)


def build_gini(inst: Instance, demand: DemandTable) -> ModelIR:
    """Lorenz-exact model: areas are ranked by coverage via assignment binaries.

    Scenarios without positive demand contribute no rank variables and no
    objective terms.
    """
    m = build_common(inst, demand)
    for scen in inst.scenarios:
        areas_s = demand.positive_areas[scen.id]
        if not areas_s:
            continue
        cov = {a: _coverage_terms(demand, inst, a, scen.id) for a in areas_s}
        _add_rank_block(m, scen.id, scen.probability, list(areas_s), cov)
    m.name = f"{inst.name}-gini"
    m.meta["formulation"] = "gini"
    m.meta["rank_entities"] = "areas"
    m.meta["valid_inequality"] = False
    return m.freeze()


def add_valid_inequality(
    model: ModelIR, inst: Instance, demand: DemandTable
) -> ModelIR:
    """Tighten the rank model with an upper-bounding-Lorenz cut per scenario.

    Adds HL[s] (at most the lowest coverage) and HU[s] (at least the highest)
    and the cut sum_j (2k+1-2j) Z[j,s] <= k*U_s + (k-1)(HL[s]-HU[s]), with U_s
    the total-coverage expression. Returns a new model; the input is unchanged.
    """
    if model.meta.get("formulation") != "gini":
        raise ValueError("the upper-bounding-Lorenz cut applies to gini models")
    m = model.copy()
    for scen in inst.scenarios:
        areas_s = demand.positive_areas[scen.id]
        if not areas_s:
            continue
        s = scen.id
        k = len(areas_s)
        hl = m.add_variable(vname("HL", s), CONTINUOUS, 0.0, INF)
        hu = m.add_variable(vname("HU", s), CONTINUOUS, 0.0, INF)
        cut: dict[str, float] = {hl: -(k - 1.0), hu: k - 1.0}
        for a in areas_s:
            cov = _coverage_terms(demand, inst, a, s)
            lo = {hl: 1.0}
            hi = {hu: 1.0}
            for x, u in cov.items():
                lo[x] = -u
                hi[x] = -u
                cut[x] = cut.get(x, 0.0) - k * u
            m.add_constraint(vname("vi_lo", a, s), lo, "<=", 0.0)
            m.add_constraint(vname("vi_hi", a, s), hi, ">=", 0.0)
        for j in range(1, k + 1):
            cut[vname("Z", j, s)] = 2.0 * k + 1.0 - 2.0 * j
        m.add_constraint(vname("vi_rank", s), cut, "<=", 0.0)
    m.meta["valid_inequality"] = True
    return m.freeze()


def build_ginic(
    inst: Instance,
    demand: DemandTable,
    clusterings: Mapping[str, Clustering],
) -> ModelIR:
    """Cluster-ranked Lorenz model: rank entities are clusters of areas.

    ``clusterings`` must provide a Clustering for every scenario that has at
    least one positive-demand area, partitioning exactly that area set.
    """
    m = build_common(inst, demand)
    cluster_sizes: dict[str, int] = {}
    for scen in inst.scenarios:
        areas_s = demand.positive_areas[scen.id]
        if not areas_s:
            continue
        clustering = clusterings.get(scen.id)
        if clustering is None:
            raise ValueError(f"missing clustering for scenario {scen.id}")
        if set(clustering.assignment) != set(areas_s):
            raise ValueError(
                f"clustering for scenario {scen.id} does not partition its "
                f"positive-demand areas"
            )
        k = clustering.k
        cluster_sizes[scen.id] = k
        cov: dict[str, dict[str, float]] = {}
        entities = [str(w) for w in range(1, k + 1)]
        for w in range(1, k + 1):
            merged: dict[str, float] = {}
            for a in clustering.members(w):
                for x, u in _coverage_terms(demand, inst, a, scen.id).items():
                    merged[x] = merged.get(x, 0.0) + u
            cov[str(w)] = merged
        _add_rank_block(m, scen.id, scen.probability, entities, cov)
    m.name = f"{inst.name}-ginic"
    m.meta["formulation"] = "ginic"
    m.meta["rank_entities"] = "clusters"
    m.meta["clusters_k"] = cluster_sizes
    return m.freeze()


def build_formulation(
    formulation: str,
    inst: Instance,
    demand: DemandTable,
    clusterings: Mapping[str, Clustering] | None = None,
    valid_inequality: bool = True,
) -> ModelIR:
    """Dispatch helper: build any of sp/gmd/gini/ginic by name."""
    if formulation == "sp":
        return build_sp(inst, demand)
    if formulation == "gmd":
        return build_gmd(inst, demand)
    if formulation == "gini":
        model = build_gini(inst, demand)
        if valid_inequality:
            model = add_valid_inequality(model, inst, demand)
        return model
    if formulation == "ginic":
        if clusterings is None:
            raise ValueError("ginic requires clusterings")
        return build_ginic(inst, demand, clusterings)
    raise ValueError(f"unknown formulation {formulation!r}")


def fix_first_stage(model: ModelIR, fs: FirstStage) -> ModelIR:
    """Clamp every Y and P variable to the plan's values (second stage only)."""
    m = model.copy()
    for name, var in list(m.variables.items()):
        if name.startswith("Y["):
            _, key = parse_indices(name)
            key = (key[0], key[1])
            if key not in fs.Y:
                raise KeyError(f"plan has no value for {name}")
            v = float(int(round(fs.Y[key])))
            m.variables[name] = replace(var, lower=v, upper=v)
        elif name.startswith("P["):
            _, key = parse_indices(name)
            key = (key[0], key[1])
            if key not in fs.P:
                raise KeyError(f"plan has no value for {name}")
            v = max(0.0, float(fs.P[key]))
            m.variables[name] = replace(var, lower=v, upper=v)
    m.meta["first_stage_fixed"] = True
    return m.freeze()


@dataclass(frozen=True)
class ScenarioMetrics:
    scenario: str
    U: float
    G: float | None
    degenerate: bool
    coverage: Mapping[str, float]

    @property
    def objective(self) -> float:
        """Coverage discounted by inequity, zero when degenerate."""
        if self.degenerate or self.G is None:
            return 0.0
        return self.U * (1.0 - self.G)


def extract_metrics(
    solution, demand: DemandTable, formulation: str = ""
) -> dict[str, ScenarioMetrics]:
    """Per-scenario coverage vector, effectiveness U and Gini G from a solution.

    ``solution`` may be a mapping of variable values or any object with a
    ``values`` attribute holding one. G comes from the Lorenz analytics on the
    per-area coverages; scenarios with zero total coverage are degenerate.
    ``formulation`` only labels reports, it does not change the computation.
    """
    values = solution if isinstance(solution, Mapping) else solution.values
    r_idx = {r: i for i, r in enumerate(demand.relief_ids)}
    a_idx = {a: i for i, a in enumerate(demand.area_ids)}
    s_idx = {s: i for i, s in enumerate(demand.scenario_ids)}
    cov: dict[tuple[str, str], float] = {}
    for name, value in values.items():
        if not name.startswith("X[") or not value:
            continue
        _, (r, a, n, s) = parse_indices(name)
        share = float(demand.u[r_idx[r], a_idx[a], s_idx[s]])
        if share:
            cov[(a, s)] = cov.get((a, s), 0.0) + share * float(value)

    out: dict[str, ScenarioMetrics] = {}
    for s in demand.scenario_ids:
        areas_s = demand.positive_areas[s]
        coverage = {a: cov.get((a, s), 0.0) for a in areas_s}
        total = float(sum(coverage.values()))
        gini: float | None = None
        degenerate = True
        if areas_s:
            curve = lorenz.rank_coverages(list(coverage.values()))
            try:
                gini = lorenz.compute_gini(curve).gini
                degenerate = False
            except lorenz.DegenerateInputError:
                gini = None
        out[s] = ScenarioMetrics(
            scenario=s,
            U=total,
            G=gini,
            degenerate=degenerate,
            coverage=coverage,
        )
    return out
