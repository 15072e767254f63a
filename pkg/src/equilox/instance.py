"""Problem data model: areas, facilities, relief items, scenarios.

An :class:`Instance` aggregates everything the optimization models need:
the disaster-prone areas, candidate response-facility (RF) options, relief-aid
catalogue, the scenario set with victim counts, the road-distance matrix and
the two stage budgets. Derived quantities (integer demands, normalized demand
shares, per-trip shipping costs, positive-demand area sets) are computed here
so every downstream module shares one code path.

Instances are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-9  # scenario probabilities must sum to 1 within this
SHARE_TOL = 1e-9  # demand shares must sum to 1 within this


class InstanceError(ValueError):
    """Base class for instance-file problems."""


class InstanceParseError(InstanceError):
    """The file is not valid JSON or misses required top-level structure."""


class InstanceValidationError(InstanceError):
    """The parsed data violates an invariant; carries field-level findings."""

    def __init__(self, findings: Sequence[str]):
        self.findings = list(findings)
        super().__init__("; ".join(self.findings))


@dataclass(frozen=True)
class Area:
    id: str
    name: str


@dataclass(frozen=True)
class FacilityOption:
    location: str  # area id of the candidate RF site
    size: str  # size-level id
    capacity_m3: float
    fixed_cost: float


@dataclass(frozen=True)
class ReliefItem:
    id: str
    length_days: int  # days of supply one victim needs
    coverage_people: int  # people covered by one unit
    volume_m3: float  # storage volume per unit
    max_preposition: int  # system-wide prepositioning cap
    # Unit prepositioning cost; a scalar (location-uniform, as in the case
    # study) or a per-location map.
    unit_prep_cost: float | Mapping[str, float] = 0.0

    def prep_cost(self, location: str) -> float:
        if isinstance(self.unit_prep_cost, Mapping):
            return float(self.unit_prep_cost[location])
        return float(self.unit_prep_cost)


@dataclass(frozen=True)
class Vehicle:
    capacity_m3: float
    fuel_cost_per_litre: float
    km_per_litre: float


@dataclass(frozen=True)
class Scenario:
    id: str
    probability: float
    victims: Mapping[str, int]  # area id -> homeless/displaced count


@dataclass(frozen=True)
class Instance:
    """Immutable problem data; see :func:`load_instance` for the file schema."""

    areas: tuple[Area, ...]
    facility_options: tuple[FacilityOption, ...]
    relief_items: tuple[ReliefItem, ...]
    vehicle: Vehicle
    scenarios: tuple[Scenario, ...]
    distances_km: np.ndarray  # (|A|, |A|), symmetric, zero diagonal
    budget_first_stage: float
    budget_second_stage: float
    min_preposition: int = 0
    # Candidate RF locations; defaults to the area set (case-study convention).
    locations: tuple[str, ...] = ()
    clusters_k: tuple[int, ...] | None = None  # optional per-scenario k override
    name: str = "instance"

    def __post_init__(self):
        if not self.locations:
            object.__setattr__(self, "locations", tuple(a.id for a in self.areas))
        dist = np.asarray(self.distances_km, dtype=float)
        dist.setflags(write=False)
        object.__setattr__(self, "distances_km", dist)

    # -- id lookups -------------------------------------------------------

    @property
    def area_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.areas)

    @property
    def relief_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.relief_items)

    @property
    def scenario_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.scenarios)

    @property
    def size_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for opt in self.facility_options:
            seen.setdefault(opt.size, None)
        return tuple(seen)

    def area_index(self, area_id: str) -> int:
        try:
            return self.area_ids.index(area_id)
        except ValueError:
            raise KeyError(f"unknown area id {area_id!r}") from None

    def relief_item(self, relief_id: str) -> ReliefItem:
        for item in self.relief_items:
            if item.id == relief_id:
                return item
        raise KeyError(f"unknown relief item {relief_id!r}")

    def distance(self, a: str, n: str) -> float:
        return float(self.distances_km[self.area_index(a), self.area_index(n)])


@dataclass(frozen=True)
class DemandTable:
    """Derived demands d, normalized shares u and positive-demand sets.

    Arrays are indexed (relief, area, scenario) in instance order; id-based
    accessors are provided for call sites that work with keys.
    """

    relief_ids: tuple[str, ...]
    area_ids: tuple[str, ...]
    scenario_ids: tuple[str, ...]
    d: np.ndarray  # (R, A, S) demand quantities
    u: np.ndarray  # (R, A, S) shares of total scenario demand
    positive_areas: Mapping[str, tuple[str, ...]]  # scenario -> ordered A_s

    def __post_init__(self):
        self.d.setflags(write=False)
        self.u.setflags(write=False)

    def demand(self, relief_id: str, area_id: str, scenario_id: str) -> float:
        return self.d[self._idx(relief_id, area_id, scenario_id)].item()

    def share(self, relief_id: str, area_id: str, scenario_id: str) -> float:
        return self.u[self._idx(relief_id, area_id, scenario_id)].item()

    def scenario_column(self, scenario_id: str) -> int:
        try:
            return self.scenario_ids.index(scenario_id)
        except ValueError:
            raise KeyError(f"unknown scenario id {scenario_id!r}") from None

    def demand_range(self) -> tuple[np.ndarray, np.ndarray]:
        """(min over scenarios, max over scenarios), each (R, A)."""
        return self.d.min(axis=2), self.d.max(axis=2)

    def _idx(self, relief_id, area_id, scenario_id):
        return (
            self.relief_ids.index(relief_id),
            self.area_ids.index(area_id),
            self.scenario_ids.index(scenario_id),
        )


def demand_table_from_quantities(
    relief_ids: Sequence[str],
    area_ids: Sequence[str],
    scenario_ids: Sequence[str],
    d: np.ndarray,
) -> DemandTable:
    """Normalize raw demand quantities into a :class:`DemandTable`.

    Shares are u = d / (total scenario demand); a scenario with zero total
    demand gets all-zero shares and an empty positive-area set. This is the
    single normalization path, shared by scenario demands and simulated
    realizations.
    """
    d = np.asarray(d)
    if d.shape != (len(relief_ids), len(area_ids), len(scenario_ids)):
        raise ValueError(f"demand array has shape {d.shape}, expected "
                         f"{(len(relief_ids), len(area_ids), len(scenario_ids))}")
    if (d < 0).any():
        raise ValueError("negative demand quantity")
    totals = d.sum(axis=(0, 1), dtype=float)  # per scenario
    u = np.zeros(d.shape, dtype=float)
    nonzero = totals > 0
    u[:, :, nonzero] = d[:, :, nonzero] / totals[nonzero]
    positive = {}
    area_totals = d.sum(axis=0)  # (A, S)
    for si, sid in enumerate(scenario_ids):
        positive[sid] = tuple(
            aid for ai, aid in enumerate(area_ids) if area_totals[ai, si] > 0
        )
    return DemandTable(
        relief_ids=tuple(relief_ids),
        area_ids=tuple(area_ids),
        scenario_ids=tuple(scenario_ids),
        d=d,
        u=u,
        positive_areas=positive,
    )


def derive_demands(inst: Instance) -> DemandTable:
    """Demand quantities from victim counts.

    d[r, a, s] = ceil(length_r / coverage_r * victims[a, s]), computed in
    exact integer arithmetic.
    """
    R, A, S = len(inst.relief_items), len(inst.areas), len(inst.scenarios)
    d = np.zeros((R, A, S), dtype=np.int64)
    for ri, item in enumerate(inst.relief_items):
        for ai, aid in enumerate(inst.area_ids):
            for si, scen in enumerate(inst.scenarios):
                v = int(scen.victims[aid])
                d[ri, ai, si] = -(-item.length_days * v // item.coverage_people)
    return demand_table_from_quantities(
        inst.relief_ids, inst.area_ids, inst.scenario_ids, d
    )


def derive_shipping_costs(inst: Instance) -> np.ndarray:
    """Per-trip unit shipping cost matrix c[a, n].

    c = fuel cost per litre / km per litre * distance. The per-unit load
    factor (item volume / vehicle capacity) is applied by the model builders,
    not here.
    """
    rate = inst.vehicle.fuel_cost_per_litre / inst.vehicle.km_per_litre
    cost = rate * inst.distances_km
    cost.setflags(write=False)
    return cost


# ---------------------------------------------------------------------------
# Validation


def validate_instance(inst: Instance) -> list[str]:
    """Check every type invariant; returns one finding per violation."""
    findings: list[str] = []
    area_ids = [a.id for a in inst.areas]

    if not inst.areas:
        findings.append("areas: empty area list")
    seen = set()
    for a in inst.areas:
        if not a.id:
            findings.append("areas: empty area id")
        if a.id in seen:
            findings.append(f"areas: duplicate area id {a.id!r}")
        seen.add(a.id)

    if not inst.facility_options:
        findings.append("facility_options: empty")
    seen_opts = set()
    for opt in inst.facility_options:
        key = (opt.location, opt.size)
        if key in seen_opts:
            findings.append(f"facility_options: duplicate (location, size) {key}")
        seen_opts.add(key)
        if opt.location not in inst.locations:
            findings.append(f"facility_options: unknown location {opt.location!r}")
        if not opt.capacity_m3 > 0:
            findings.append(
                f"facility_options[{opt.location},{opt.size}]: capacity must be > 0"
            )
        if opt.fixed_cost < 0:
            findings.append(
                f"facility_options[{opt.location},{opt.size}]: negative fixed cost"
            )

    if not inst.relief_items:
        findings.append("relief_items: empty")
    seen_items = set()
    for item in inst.relief_items:
        if item.id in seen_items:
            findings.append(f"relief_items: duplicate id {item.id!r}")
        seen_items.add(item.id)
        if not item.volume_m3 > 0:
            findings.append(f"relief_items[{item.id}]: volume must be > 0")
        if item.coverage_people < 1:
            findings.append(f"relief_items[{item.id}]: coverage must be >= 1")
        if item.length_days < 1:
            findings.append(f"relief_items[{item.id}]: length must be >= 1")
        if item.max_preposition < 0:
            findings.append(f"relief_items[{item.id}]: negative max preposition")
        try:
            costs = [item.prep_cost(n) for n in inst.locations]
        except KeyError as exc:
            findings.append(f"relief_items[{item.id}]: prep cost missing for {exc}")
            costs = []
        if any(c < 0 for c in costs):
            findings.append(f"relief_items[{item.id}]: negative prep cost")

    for attr in ("capacity_m3", "fuel_cost_per_litre", "km_per_litre"):
        if not getattr(inst.vehicle, attr) > 0:
            findings.append(f"vehicle.{attr}: must be strictly positive")

    if not inst.scenarios:
        findings.append("scenarios: empty scenario list")
    else:
        total_p = 0.0
        seen_s = set()
        for scen in inst.scenarios:
            if scen.id in seen_s:
                findings.append(f"scenarios: duplicate id {scen.id!r}")
            seen_s.add(scen.id)
            if not (0.0 < scen.probability <= 1.0):
                findings.append(
                    f"scenarios[{scen.id}]: probability {scen.probability} outside (0, 1]"
                )
            total_p += scen.probability
            for aid in area_ids:
                if aid not in scen.victims:
                    findings.append(f"scenarios[{scen.id}]: missing victims for {aid!r}")
            for aid, v in scen.victims.items():
                if aid not in seen:
                    findings.append(f"scenarios[{scen.id}]: unknown area {aid!r}")
                elif v < 0:
                    findings.append(f"scenarios[{scen.id}]: negative victims for {aid!r}")
        if abs(total_p - 1.0) > PROB_TOL:
            findings.append(f"scenarios: probabilities sum to {total_p!r}, not 1")

    dist = inst.distances_km
    n = len(area_ids)
    if dist.shape != (n, n):
        findings.append(f"distances_km: shape {dist.shape}, expected {(n, n)}")
    else:
        if (np.diag(dist) != 0).any():
            findings.append("distances_km: nonzero diagonal")
        if not np.array_equal(dist, dist.T):
            findings.append("distances_km: matrix not symmetric")
        if (dist < 0).any():
            findings.append("distances_km: negative distance")

    for n in inst.locations:
        if n not in seen:
            findings.append(f"locations: {n!r} not an area id (distance matrix "
                            "covers areas only)")

    if inst.budget_first_stage < 0:
        findings.append("budgets.first_stage: negative")
    if inst.budget_second_stage < 0:
        findings.append("budgets.second_stage: negative")
    if inst.min_preposition < 0:
        findings.append("min_preposition: negative")

    if inst.clusters_k is not None and len(inst.clusters_k) != len(inst.scenarios):
        findings.append(
            f"clusters_k: {len(inst.clusters_k)} entries for "
            f"{len(inst.scenarios)} scenarios"
        )

    return findings


# ---------------------------------------------------------------------------
# Loading


def instance_from_dict(payload: Mapping, name: str = "instance") -> Instance:
    """Build and validate an Instance from parsed JSON data."""
    try:
        areas = tuple(Area(id=str(a["id"]), name=str(a.get("name", a["id"])))
                      for a in payload["areas"])
        options = tuple(
            FacilityOption(
                location=str(o["location"]),
                size=str(o["size"]),
                capacity_m3=float(o["capacity_m3"]),
                fixed_cost=float(o["fixed_cost"]),
            )
            for o in payload["facility_options"]
        )
        items = []
        for it in payload["relief_items"]:
            cost = it["unit_prep_cost"]
            if isinstance(cost, Mapping):
                cost = {str(k): float(v) for k, v in cost.items()}
            else:
                cost = float(cost)
            items.append(
                ReliefItem(
                    id=str(it["id"]),
                    length_days=int(it["length_days"]),
                    coverage_people=int(it["coverage_people"]),
                    volume_m3=float(it["volume_m3"]),
                    max_preposition=int(it["max_preposition"]),
                    unit_prep_cost=cost,
                )
            )
        veh = payload["vehicle"]
        vehicle = Vehicle(
            capacity_m3=float(veh["capacity_m3"]),
            fuel_cost_per_litre=float(veh["fuel_cost_per_litre"]),
            km_per_litre=float(veh["km_per_litre"]),
        )
        scenarios = tuple(
            Scenario(
                id=str(s["id"]),
                probability=float(s["probability"]),
                victims={str(k): int(v) for k, v in s["victims"].items()},
            )
            for s in payload["scenarios"]
        )
        distances = np.asarray(payload["distances_km"], dtype=float)
        budgets = payload["budgets"]
        clusters_k = payload.get("clusters_k")
        inst = Instance(
            areas=areas,
            facility_options=options,
            relief_items=tuple(items),
            vehicle=vehicle,
            scenarios=scenarios,
            distances_km=distances,
            budget_first_stage=float(budgets["first_stage"]),
            budget_second_stage=float(budgets["second_stage"]),
            min_preposition=int(payload.get("min_preposition", 0)),
            locations=tuple(str(n) for n in payload.get("locations", ())),
            clusters_k=None if clusters_k is None else tuple(int(k) for k in clusters_k),
            name=str(payload.get("name", name)),
        )
    except InstanceError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceParseError(f"malformed instance data: {exc}") from exc

    findings = validate_instance(inst)
    if findings:
        raise InstanceValidationError(findings)
    return inst


def load_instance(path: str | Path) -> Instance:
    """Load, parse and validate an instance file."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceParseError(f"cannot read {path}: {exc}") from exc
    if not isinstance(payload, Mapping):
        raise InstanceParseError(f"{path}: top level must be a JSON object")
    return instance_from_dict(payload, name=path.stem)


def bundled_instance_path(name: str = "serrana") -> Path:
    """Filesystem path of a bundled case-study instance."""
    ref = resources.files("equilox.data").joinpath(f"{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)
