"""Tests for sampling, plan evaluation and report aggregation."""

import csv
import math

import numpy as np
import pytest

from equilox.cluster import cluster_scenarios
from equilox.lorenz import compute_gini, rank_coverages
from equilox.models import FirstStage, build_sp
from equilox.sim import (
    EVAL_TIME_LIMIT_S,
    EvalRecord,
    PlanSolveError,
    _evaluation_model,
    _single_scenario_view,
    benefit_matrix,
    evaluate,
    posthoc_gini,
    run_simulation,
    sample_realizations,
    summarize,
    summary_stats,
)
from equilox.solver import Solution, SolveParams, solve


class TestSampleRealizations:
    def test_count_must_be_positive(self, toy_demand):
        with pytest.raises(ValueError, match="count"):
            sample_realizations(toy_demand, 0, seed=0)

    def test_deterministic_per_seed(self, toy_demand):
        a = sample_realizations(toy_demand, 5, seed=11)
        b = sample_realizations(toy_demand, 5, seed=11)
        c = sample_realizations(toy_demand, 5, seed=12)
        for ra, rb in zip(a, b):
            assert ra.id == rb.id
            assert np.array_equal(ra.demand.d, rb.demand.d)
        assert any(
            not np.array_equal(ra.demand.d, rc.demand.d) for ra, rc in zip(a, c)
        )

    def test_single_stream_prefix_property(self, toy_demand):
        short = sample_realizations(toy_demand, 1, seed=5)
        long = sample_realizations(toy_demand, 4, seed=5)
        assert np.array_equal(short[0].demand.d, long[0].demand.d)

    def test_ids_are_sequential(self, toy_demand):
        reals = sample_realizations(toy_demand, 3, seed=0)
        assert [r.id for r in reals] == ["r0001", "r0002", "r0003"]

    def test_integer_draws_cover_inclusive_range(self, toy_demand):
        lo, hi = toy_demand.demand_range()
        reals = sample_realizations(toy_demand, 300, seed=2)
        draws = np.stack([r.demand.d[:, :, 0] for r in reals])
        assert np.all(draws == np.round(draws))
        assert np.all(draws >= lo) and np.all(draws <= hi)
        # area "a" spans 0..10 across scenarios; both endpoints should appear
        a_col = draws[:, 0, 0]
        assert a_col.min() == lo[0, 0]
        assert a_col.max() == hi[0, 0]

    def test_continuous_draws(self, toy_demand):
        lo, hi = toy_demand.demand_range()
        reals = sample_realizations(toy_demand, 5, seed=2, continuous=True)
        draws = np.stack([r.demand.d[:, :, 0] for r in reals])
        assert np.all(draws >= lo) and np.all(draws <= hi)
        assert np.any(draws != np.round(draws))

    def test_realization_views(self, toy_demand):
        r = sample_realizations(toy_demand, 1, seed=0)[0]
        assert set(r.d) == {("kit", "a"), ("kit", "b"), ("kit", "c")}
        total = sum(r.d.values())
        assert sum(r.u.values()) == pytest.approx(1.0)
        for key, share in r.u.items():
            assert share == pytest.approx(r.d[key] / total)
        assert r.areas == tuple(a for a in ("a", "b", "c") if r.d[("kit", a)] > 0)


class TestPosthocGini:
    def test_equal_coverages_have_zero_gini(self):
        gini, total, degenerate = posthoc_gini([0.3, 0.3, 0.3, 0.3])
        assert not degenerate
        assert gini == pytest.approx(0.0, abs=1e-12)
        assert total == pytest.approx(1.2)

    def test_single_owner(self):
        for n in (2, 5, 9):
            values = [0.0] * (n - 1) + [0.7]
            gini, _, _ = posthoc_gini(values)
            assert gini == pytest.approx(1.0 - 1.0 / n, abs=1e-12)

    def test_known_quartet(self):
        gini, total, _ = posthoc_gini([0.1, 0.2, 0.3, 0.4])
        assert gini == pytest.approx(0.25, abs=1e-12)
        assert total == pytest.approx(1.0)

    def test_degenerate_inputs(self):
        assert posthoc_gini([]) == (None, 0.0, True)
        assert posthoc_gini([0.0, 0.0]) == (None, 0.0, True)

    def test_scale_invariance(self):
        base, _, _ = posthoc_gini([0.1, 0.5, 0.9])
        scaled, _, _ = posthoc_gini([1.0, 5.0, 9.0])
        assert scaled == pytest.approx(base, abs=1e-12)

    def test_agrees_with_analytics_module(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            n = int(rng.integers(1, 11))
            values = rng.uniform(0.0, 1.0, size=n)
            gini, total, degenerate = posthoc_gini(values)
            assert not degenerate
            oracle = compute_gini(rank_coverages(list(values)))
            assert gini == pytest.approx(oracle.gini, abs=1e-12)
            assert total == pytest.approx(oracle.effectiveness, abs=1e-12)


class TestEvaluationModelSelection:
    @pytest.fixture()
    def view_and_table(self, toy, toy_demand):
        r = sample_realizations(toy_demand, 1, seed=0)[0]
        return _single_scenario_view(toy, r.id), r.demand

    def test_single_scenario_view(self, toy):
        view = _single_scenario_view(toy, "r0042")
        assert len(view.scenarios) == 1
        assert view.scenarios[0].id == "r0042"
        assert view.scenarios[0].probability == 1.0
        assert view.clusters_k is None
        assert view.name.endswith("-r0042")

    def test_shared_recourse_is_plain_effectiveness(self, view_and_table):
        view, table = view_and_table
        for formulation in ("sp", "gmd", "gini", "ginic"):
            m = _evaluation_model(formulation, view, table, False, 0)
            assert not any(n.startswith(("O[", "t[")) for n in m.variables)

    def test_own_recourse_models(self, view_and_table):
        view, table = view_and_table
        gmd = _evaluation_model("gmd", view, table, True, 0)
        assert any(n.startswith("t[") for n in gmd.variables)
        gini = _evaluation_model("gini", view, table, True, 0)
        assert gini.meta.get("valid_inequality") is True
        assert any(n.startswith("HU[") for n in gini.variables)
        ginic = _evaluation_model("ginic", view, table, True, 0)
        assert any(n.startswith("O[") for n in ginic.variables)
        assert ginic.meta.get("clusters_k")

    def test_unknown_formulation(self, view_and_table):
        view, table = view_and_table
        with pytest.raises(ValueError, match="unknown formulation"):
            _evaluation_model("nope", view, table, True, 0)


def zero_plan(inst) -> FirstStage:
    y = {(s, n): 0 for s in inst.size_ids for n in inst.locations}
    p = {(r, n): 0.0 for r in inst.relief_ids for n in inst.locations}
    return FirstStage(Y=y, P=p)


class TestEvaluate:
    @pytest.fixture()
    def sp_plan(self, toy, toy_demand):
        sol = solve(build_sp(toy, toy_demand), SolveParams(time_limit_s=60.0))
        assert sol.status == "optimal"
        return FirstStage.from_solution(sol.values)

    def test_records_scored(self, toy, toy_demand, sp_plan):
        reals = sample_realizations(toy_demand, 3, seed=0)
        records = evaluate("sp", toy, sp_plan, reals,
                           params=SolveParams(time_limit_s=60.0))
        assert [r.realization for r in records] == [r.id for r in reals]
        for rec, real in zip(records, reals):
            assert rec.formulation == "sp"
            assert rec.solved
            assert 0.0 <= rec.U_star <= 1.0 + 1e-6
            assert set(rec.coverage) <= set(real.areas)
            assert (rec.G_star is None) == rec.degenerate
            assert rec.wall_time_s >= 0.0

    def test_posthoc_score_matches_analytics(self, toy, toy_demand, sp_plan):
        reals = sample_realizations(toy_demand, 3, seed=0)
        records = evaluate("sp", toy, sp_plan, reals,
                           params=SolveParams(time_limit_s=60.0))
        for rec in records:
            if rec.degenerate:
                continue
            oracle = compute_gini(rank_coverages(list(rec.coverage.values())))
            assert rec.G_star == pytest.approx(oracle.gini, abs=1e-9)
            assert rec.U_star == pytest.approx(oracle.effectiveness, abs=1e-9)

    def test_zero_plan_is_degenerate_not_failed(self, toy, toy_demand):
        reals = sample_realizations(toy_demand, 2, seed=0)
        records = evaluate("sp", toy, zero_plan(toy), reals,
                           params=SolveParams(time_limit_s=60.0))
        for rec in records:
            assert rec.solved
            assert rec.degenerate
            assert rec.U_star == pytest.approx(0.0, abs=1e-9)
            assert rec.G_star is None

    def test_impossible_plan_is_flagged(self, toy, toy_demand):
        plan = zero_plan(toy)
        p = dict(plan.P)
        p[("kit", "a")] = 50.0  # stock at a closed site violates storage
        plan = FirstStage(Y=plan.Y, P=p)
        reals = sample_realizations(toy_demand, 2, seed=0)
        records = evaluate("sp", toy, plan, reals,
                           params=SolveParams(time_limit_s=60.0))
        for rec in records:
            assert rec.status == "infeasible"
            assert not rec.solved
            assert math.isnan(rec.U_star)
            assert rec.G_star is None
            assert rec.coverage == {}

    def test_thread_pool_matches_serial(self, toy, toy_demand, sp_plan):
        reals = sample_realizations(toy_demand, 3, seed=1)
        serial = evaluate("sp", toy, sp_plan, reals,
                          params=SolveParams(time_limit_s=60.0), jobs=1)
        pooled = evaluate("sp", toy, sp_plan, reals,
                          params=SolveParams(time_limit_s=60.0), jobs=2)
        assert [(r.realization, r.U_star, r.G_star) for r in serial] == \
            [(r.realization, r.U_star, r.G_star) for r in pooled]

    def test_shared_recourse_scores_equal_across_formulations(
        self, toy, toy_demand, sp_plan
    ):
        # with own_recourse off every formulation solves the same model,
        # so U* must coincide record by record
        reals = sample_realizations(toy_demand, 2, seed=0)
        sp = evaluate("sp", toy, sp_plan, reals,
                      params=SolveParams(time_limit_s=60.0))
        gini = evaluate("gini", toy, sp_plan, reals, own_recourse=False,
                        params=SolveParams(time_limit_s=60.0))
        for a, b in zip(sp, gini):
            assert b.solved
            assert b.U_star == pytest.approx(a.U_star, abs=1e-7)

    def test_default_time_limit(self):
        assert EVAL_TIME_LIMIT_S == 300.0


class TestRunSimulation:
    def test_full_pipeline_on_small_instance(self, toy, toy_demand):
        lines: list[str] = []
        clusterings = cluster_scenarios(toy_demand, seed=0)
        result = run_simulation(
            toy, toy_demand,
            formulations=("sp", "gmd", "gini", "ginic"),
            count=2, seed=3,
            full_params=SolveParams(time_limit_s=120.0),
            eval_params=SolveParams(time_limit_s=60.0),
            clusterings=clusterings,
            echo=lines.append,
        )
        assert result.formulations == ("sp", "gmd", "gini", "ginic")
        assert set(result.plans) == set(result.formulations)
        assert [r.id for r in result.realizations] == ["r0001", "r0002"]
        for name in result.formulations:
            assert result.full_solutions[name].feasible
            assert result.plans[name].validate(toy) == []
            recs = result.records[name]
            assert [r.realization for r in recs] == ["r0001", "r0002"]
            assert all(r.formulation == name for r in recs)
        flat = result.all_records()
        assert len(flat) == 8
        assert [r.formulation for r in flat] == \
            ["sp", "sp", "gmd", "gmd", "gini", "gini", "ginic", "ginic"]
        assert any("evaluating 2 realizations x 4 formulations" in l
                   for l in lines)
        assert any(l.startswith("sp:") and "RFs" in l for l in lines)

    def test_repeat_runs_identical(self, toy, toy_demand):
        def run():
            result = run_simulation(
                toy, toy_demand, formulations=("sp",), count=2, seed=9,
                full_params=SolveParams(time_limit_s=60.0),
                eval_params=SolveParams(time_limit_s=60.0),
            )
            return [(r.formulation, r.realization, r.U_star, r.G_star)
                    for r in result.all_records()]
        assert run() == run()

    def test_plan_solve_failure_raises(self, toy, toy_demand, monkeypatch):
        import equilox.sim as sim_mod
        bad = Solution("infeasible", {}, math.nan, math.nan, math.nan, 0.0,
                       "nothing works")
        monkeypatch.setattr(sim_mod, "solve", lambda *a, **k: bad)
        with pytest.raises(PlanSolveError) as err:
            run_simulation(toy, toy_demand, formulations=("sp",), count=1)
        assert err.value.formulation == "sp"
        assert err.value.solution is bad
        assert "infeasible" in str(err.value)
        assert "nothing works" in str(err.value)


def rec(f, rid, U, G, degenerate=False, status="optimal", gap=0.0):
    return EvalRecord(formulation=f, realization=rid, U_star=U, G_star=G,
                      degenerate=degenerate, coverage={}, status=status,
                      gap=gap, wall_time_s=0.1)


SAMPLE_RECORDS = [
    rec("sp", "r1", 0.5, 0.2),
    rec("sp", "r2", 0.7, 0.4),
    rec("sp", "r3", 0.0, None, degenerate=True),
    rec("sp", "r4", math.nan, None, status="error", gap=math.nan),
    rec("gini", "r1", 0.4, 0.1),
    rec("gini", "r2", 0.6, 0.2),
    rec("gini", "r3", 1.0, 0.0),
]


class TestSummaryStats:
    def test_empty(self):
        stats = summary_stats([])
        assert stats["n"] == 0
        assert math.isnan(stats["mean"]) and math.isnan(stats["cov_pct"])

    def test_single_value(self):
        stats = summary_stats([0.4])
        assert stats == {"mean": 0.4, "sd": 0.0, "cov_pct": 0.0,
                         "min": 0.4, "max": 0.4, "n": 1}

    def test_known_vector(self):
        values = [0.1827, 0.7873, 0.2420, 0.2813, 0.1935, 0.2404]
        stats = summary_stats(values)
        assert stats["mean"] == pytest.approx(0.3212, abs=1e-12)
        assert stats["sd"] == pytest.approx(math.sqrt(0.26713204 / 5), abs=1e-9)
        assert stats["cov_pct"] == pytest.approx(71.96, abs=0.05)
        assert stats["min"] == 0.1827 and stats["max"] == 0.7873
        assert stats["n"] == 6

    def test_zero_mean_has_zero_cov(self):
        assert summary_stats([1.0, -1.0])["cov_pct"] == 0.0


class TestBenefitMatrix:
    def records(self):
        return {"sp": [r for r in SAMPLE_RECORDS if r.formulation == "sp"],
                "gini": [r for r in SAMPLE_RECORDS if r.formulation == "gini"]}

    def test_inequity_matrix(self):
        m = benefit_matrix(self.records(), "inequity")
        assert m.formulations == ("sp", "gini")
        assert m.delta["sp"] == pytest.approx(0.3)
        assert m.delta["gini"] == pytest.approx(0.1)
        assert m.cells[("sp", "sp")] == 0.0
        assert m.cells[("sp", "gini")] == pytest.approx(-200.0 / 3.0)
        assert m.cells[("gini", "sp")] == pytest.approx(200.0)
        # degenerate and failed records both drop out
        assert m.counts["sp"] == 2 and m.excluded["sp"] == 2
        assert m.counts["gini"] == 3 and m.excluded["gini"] == 0

    def test_effectiveness_keeps_degenerate_records(self):
        m = benefit_matrix(self.records(), "effectiveness")
        assert m.delta["sp"] == pytest.approx(0.4)
        assert m.delta["gini"] == pytest.approx(2.0 / 3.0)
        assert m.counts["sp"] == 3 and m.excluded["sp"] == 1
        assert m.cells[("sp", "gini")] == pytest.approx(200.0 / 3.0)

    def test_zero_average_row_is_undefined(self):
        data = {"a": [rec("a", "r1", 0.0, None, degenerate=True)],
                "b": [rec("b", "r1", 0.5, 0.1)]}
        m = benefit_matrix(data, "effectiveness")
        assert m.cells[("a", "b")] is None
        assert m.cells[("a", "a")] == 0.0
        assert m.cells[("b", "a")] == pytest.approx(-100.0)

    def test_no_valid_records_raises(self):
        only_degenerate = {"a": [rec("a", "r1", 0.0, None, degenerate=True)]}
        with pytest.raises(ValueError, match="no valid records"):
            benefit_matrix(only_degenerate, "inequity")
        only_failed = {"a": [rec("a", "r1", math.nan, None, status="error")]}
        with pytest.raises(ValueError, match="no valid records"):
            benefit_matrix(only_failed, "effectiveness")

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown metric"):
            benefit_matrix(self.records(), "speed")


def read_csv(path):
    with path.open(newline="") as handle:
        return list(csv.reader(handle))


class TestSummarize:
    def test_writes_all_report_files(self, tmp_path):
        paths = summarize(SAMPLE_RECORDS, tmp_path)
        assert set(paths) == {"scatter", "hist_gini", "hist_eff", "summary",
                              "benefit_inequity", "benefit_effectiveness"}
        for p in paths.values():
            assert p.exists()

    def test_scatter_rows(self, tmp_path):
        rows = read_csv(summarize(SAMPLE_RECORDS, tmp_path)["scatter"])
        assert rows[0] == ["formulation", "realization", "U_star", "G_star",
                           "degenerate", "status", "gap", "wall_time_s"]
        assert len(rows) == 1 + len(SAMPLE_RECORDS)
        failed = next(r for r in rows[1:] if r[5] == "error")
        assert failed[2] == "" and failed[3] == "" and failed[6] == ""
        degenerate = next(r for r in rows[1:] if r[4] == "1")
        assert degenerate[3] == ""

    def test_gini_histogram(self, tmp_path):
        rows = read_csv(summarize(SAMPLE_RECORDS, tmp_path)["hist_gini"])[1:]
        assert all(len(r) == 4 for r in rows)
        by_f: dict[str, int] = {}
        for f, lo, hi, count in rows:
            assert float(hi) - float(lo) == pytest.approx(0.02)
            by_f[f] = by_f.get(f, 0) + int(count)
        # degenerate and failed records contribute nothing
        assert by_f == {"sp": 2, "gini": 3}
        sp_bin = next(r for r in rows if r[0] == "sp" and r[1] == "0.20")
        assert int(sp_bin[3]) == 1

    def test_effectiveness_histogram_clips_to_unit(self, tmp_path):
        rows = read_csv(summarize(SAMPLE_RECORDS, tmp_path)["hist_eff"])[1:]
        last = next(r for r in rows if r[0] == "gini" and r[2] == "1.00")
        assert int(last[3]) == 1  # the U* = 1.0 record lands in the top bin
        first = next(r for r in rows if r[0] == "sp" and r[1] == "0.00")
        assert int(first[3]) == 1  # the degenerate record counts at zero

    def test_summary_table(self, tmp_path):
        rows = read_csv(summarize(SAMPLE_RECORDS, tmp_path)["summary"])
        assert rows[0] == ["formulation", "metric", "mean", "sd", "cov_pct",
                           "best", "worst", "n", "n_excluded"]
        table = {(r[0], r[1]): r for r in rows[1:]}
        assert set(table) == {("sp", "U_star"), ("sp", "G_star"),
                              ("gini", "U_star"), ("gini", "G_star")}
        sp_u = table[("sp", "U_star")]
        assert float(sp_u[2]) == pytest.approx(0.4)
        assert (sp_u[7], sp_u[8]) == ("3", "1")
        sp_g = table[("sp", "G_star")]
        assert float(sp_g[2]) == pytest.approx(0.3)
        assert (sp_g[7], sp_g[8]) == ("2", "2")
        # best effectiveness is the max, best inequity the min
        assert float(sp_u[5]) == pytest.approx(0.7)
        assert float(sp_g[5]) == pytest.approx(0.2)

    def test_benefit_tables(self, tmp_path):
        paths = summarize(SAMPLE_RECORDS, tmp_path)
        rows = read_csv(paths["benefit_inequity"])
        assert rows[0] == ["formulation", "sp", "gini", "average", "n",
                           "n_excluded"]
        sp_row = next(r for r in rows[1:] if r[0] == "sp")
        assert float(sp_row[2]) == pytest.approx(-200.0 / 3.0)
        assert float(sp_row[3]) == pytest.approx(0.3)
        eff = read_csv(paths["benefit_effectiveness"])
        sp_eff = next(r for r in eff[1:] if r[0] == "sp")
        assert float(sp_eff[2]) == pytest.approx(200.0 / 3.0)

    def test_degenerate_only_benefit_degrades_to_header(self, tmp_path):
        records = [rec("sp", "r1", 0.0, None, degenerate=True)]
        paths = summarize(records, tmp_path)
        assert read_csv(paths["benefit_inequity"]) == [["formulation"]]
        # effectiveness still has the one zero-valued record
        assert len(read_csv(paths["benefit_effectiveness"])) == 2

    def test_empty_records(self, tmp_path):
        paths = summarize([], tmp_path)
        assert read_csv(paths["scatter"])[1:] == []
        assert read_csv(paths["hist_gini"])[1:] == []
        assert read_csv(paths["summary"])[1:] == []
        assert read_csv(paths["benefit_inequity"]) == [["formulation"]]
