"""Shared fixtures: a hand-sized toy instance, random generators, the case study."""

from __future__ import annotations

import numpy as np
import pytest

from equilox.instance import (
    bundled_instance_path,
    derive_demands,
    instance_from_dict,
    load_instance,
)


def toy_payload(**overrides) -> dict:
    """Three areas, one relief item, two sizes, two scenarios.

    The item covers as many people as it lasts days, so each (item, area)
    demand equals the victim count and every number stays hand-checkable.
    """
    payload = {
        "name": "toy",
        "areas": [{"id": "a"}, {"id": "b"}, {"id": "c"}],
        "distances_km": [
            [0.0, 10.0, 20.0],
            [10.0, 0.0, 15.0],
            [20.0, 15.0, 0.0],
        ],
        "facility_options": [
            {"location": loc, "size": size, "capacity_m3": cap, "fixed_cost": cost}
            for loc in ("a", "b", "c")
            for size, cap, cost in (("small", 10.0, 100.0), ("large", 100.0, 500.0))
        ],
        "relief_items": [
            {
                "id": "kit",
                "length_days": 7,
                "coverage_people": 7,
                "volume_m3": 0.25,
                "max_preposition": 100,
                "unit_prep_cost": 5.0,
            }
        ],
        "vehicle": {"capacity_m3": 12.0, "fuel_cost_per_litre": 3.59,
                    "km_per_litre": 2.5},
        "scenarios": [
            {"id": "s1", "probability": 0.6,
             "victims": {"a": 10, "b": 20, "c": 30}},
            {"id": "s2", "probability": 0.4,
             "victims": {"a": 0, "b": 5, "c": 5}},
        ],
        "budgets": {"first_stage": 1000.0, "second_stage": 10000.0},
        "min_preposition": 1,
    }
    payload.update(overrides)
    return payload


def random_payload(rng: np.random.Generator, n_areas: int = 4,
                   n_scenarios: int = 2, n_items: int = 1,
                   n_sizes: int = 1) -> dict:
    """A random valid instance; budgets sized so opening a few RFs pays off."""
    areas = [f"a{i}" for i in range(1, n_areas + 1)]
    dist = rng.uniform(5.0, 60.0, size=(n_areas, n_areas))
    dist = np.round((dist + dist.T) / 2.0, 2)
    np.fill_diagonal(dist, 0.0)

    items = []
    for r in range(n_items):
        items.append({
            "id": f"r{r + 1}",
            "length_days": int(rng.integers(3, 15)),
            "coverage_people": int(rng.integers(3, 9)),
            "volume_m3": round(float(rng.uniform(0.05, 0.5)), 3),
            "max_preposition": 500,
            "unit_prep_cost": round(float(rng.uniform(1.0, 10.0)), 2),
        })

    options = []
    for loc in areas:
        for level in range(n_sizes):
            options.append({
                "location": loc,
                "size": f"s{level + 1}",
                "capacity_m3": round(float(rng.uniform(5.0, 40.0)) * (level + 1), 2),
                "fixed_cost": round(float(rng.uniform(50.0, 300.0)) * (level + 1), 2),
            })

    weights = rng.integers(1, 10, size=n_scenarios)
    scenarios = []
    for s in range(n_scenarios):
        victims = {a: int(rng.integers(0, 40)) for a in areas}
        if not any(victims.values()):
            victims[areas[int(rng.integers(0, n_areas))]] = int(rng.integers(1, 40))
        scenarios.append({
            "id": f"s{s + 1}",
            "probability": float(weights[s] / weights.sum()),
            "victims": victims,
        })

    mean_fixed = float(np.mean([o["fixed_cost"] for o in options]))
    mean_cost = float(np.mean([it["unit_prep_cost"] for it in items]))
    total_victims = max(sum(sum(s["victims"].values()) for s in scenarios), 1)
    budget1 = 2.0 * mean_fixed + 0.5 * mean_cost * total_victims

    return {
        "name": f"rand{n_areas}x{n_scenarios}",
        "areas": [{"id": a} for a in areas],
        "distances_km": dist.tolist(),
        "facility_options": options,
        "relief_items": items,
        "vehicle": {"capacity_m3": 12.0, "fuel_cost_per_litre": 3.59,
                    "km_per_litre": 2.5},
        "scenarios": scenarios,
        "budgets": {"first_stage": round(budget1, 2), "second_stage": 1e6},
        "min_preposition": 1,
    }


def random_instance(rng: np.random.Generator, **kwargs):
    return instance_from_dict(random_payload(rng, **kwargs))


def slack_payload(rng: np.random.Generator, n_areas: int = 4,
                  n_scenarios: int = 2) -> dict:
    """Random payload whose budgets and capacities never bind.

    Useful when a test wants to pin the plan and allocation and exercise only
    the ranking machinery.
    """
    payload = random_payload(rng, n_areas=n_areas, n_scenarios=n_scenarios)
    for opt in payload["facility_options"]:
        opt["capacity_m3"] = 1e6
    for item in payload["relief_items"]:
        item["max_preposition"] = 1e9
    payload["budgets"] = {"first_stage": 1e9, "second_stage": 1e9}
    payload["min_preposition"] = 0
    return payload


def pin_allocation(model, inst, demand, rng: np.random.Generator):
    """Fix the plan and a random allocation, leaving the rank block free.

    Assumes one facility size per location and slack capacities (see
    slack_payload): every location opens, stocks cover any shipment, and each
    allocation fraction is drawn below 1/|N| so per-area totals stay under 1.
    Returns the pinned frozen copy and the X values that were drawn.
    """
    from equilox.models import Variable, vname

    m = model.copy()
    n_loc = len(inst.locations)
    xvals: dict[str, float] = {}
    for name, var in list(m.variables.items()):
        if name.startswith("X["):
            x = float(rng.uniform(0.0, 1.0)) / n_loc
            xvals[name] = x
            m.variables[name] = Variable(name, var.kind, x, x)
        elif name.startswith("Y["):
            m.variables[name] = Variable(name, var.kind, 1.0, 1.0)
    for ri, r in enumerate(demand.relief_ids):
        total = float(demand.d[ri].sum()) + 1.0
        for n in inst.locations:
            name = vname("P", r, n)
            var = m.variables[name]
            m.variables[name] = Variable(name, var.kind, total, total)
    return m.freeze(), xvals


@pytest.fixture
def toy():
    return instance_from_dict(toy_payload())


@pytest.fixture
def toy_demand(toy):
    return derive_demands(toy)


@pytest.fixture(scope="session")
def serrana():
    return load_instance(bundled_instance_path())


@pytest.fixture(scope="session")
def serrana_demand(serrana):
    return derive_demands(serrana)
