"""Command line front end: load, build, solve, simulate, report."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import click

from . import models, sim, solver
from .cluster import cluster_scenarios
from .instance import (
    DemandTable,
    Instance,
    derive_demands,
    load_instance,
    validate_instance,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_USAGE = 3


class ValidationFailure(Exception):
    """Bad instance data; maps to exit code 1."""

    exit_code = EXIT_VALIDATION


class SolverFailure(Exception):
    """No usable solution came back; maps to exit code 2."""

    exit_code = EXIT_SOLVER


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(obj):
    """Recursively replace non-finite floats so the JSON stays strict."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")


@dataclass
class RunManifest:
    """Record of one invocation, sufficient to replay it on the same backend.

    Written as manifest.json next to the other artifacts; rewritten once the
    command finishes (or fails) with the final status and artifact paths.
    """

    command: str
    replay: list[str]
    instance_path: str = ""
    instance_sha256: str = ""
    formulations: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    clusters: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    repro: bool = False
    backend: str = "scipy"
    created_utc: str = ""
    finished_utc: str = ""
    status: str = "running"
    error: str = ""
    artifacts: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        payload = {
            "command": self.command,
            "replay": self.replay,
            "instance": {"path": self.instance_path, "sha256": self.instance_sha256},
            "formulations": list(self.formulations),
            "params": self.params,
            "seeds": self.seeds,
            "clusters": self.clusters,
            "sampling": self.sampling,
            "repro": self.repro,
            "backend": self.backend,
            "created_utc": self.created_utc,
            "finished_utc": self.finished_utc,
            "status": self.status,
            "error": self.error,
            "artifacts": self.artifacts,
        }
        _write_json(path, payload)
        self.artifacts.setdefault("manifest", "manifest.json")
        return path


def _default_out(tag: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    base = Path("out") / f"{stamp}-{tag}"
    path, n = base, 2
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    return path


def _resolve_out(out_dir: Path | None, tag: str) -> Path:
    path = Path(out_dir) if out_dir is not None else _default_out(tag)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _backend_label(solver_path: str | None) -> str:
    return solver_path or os.environ.get("EQUILOX_SOLVER") or "scipy"


def _load_checked(path: Path) -> tuple[Instance, DemandTable]:
    try:
        inst = load_instance(path)
    except Exception as exc:
        raise ValidationFailure(f"{path}: {exc}") from exc
    findings = validate_instance(inst)
    if findings:
        raise ValidationFailure("\n".join(findings))
    return inst, derive_demands(inst)


def _parse_clusters(text: str | None, inst: Instance) -> list[int] | None:
    if text is None:
        return None
    try:
        counts = [int(part) for part in text.split(",")]
    except ValueError:
        raise click.UsageError(f"--clusters expects integers, got {text!r}")
    if len(counts) != len(inst.scenario_ids):
        raise click.UsageError(
            f"--clusters needs {len(inst.scenario_ids)} entries "
            f"(one per scenario), got {len(counts)}"
        )
    if any(k < 1 for k in counts):
        raise click.UsageError("--clusters entries must be >= 1")
    return counts


def _clusterings_for(
    inst: Instance, demand: DemandTable, clusters_flag: str | None, seed: int
):
    """Cluster config resolution: flag beats instance default beats elbow."""
    counts = _parse_clusters(clusters_flag, inst)
    source = "flag"
    if counts is None:
        counts = list(inst.clusters_k) if inst.clusters_k else None
        source = "instance" if counts else "elbow"
    clusterings = cluster_scenarios(demand, seed=seed, k_per_scenario=counts)
    resolved = {s: clusterings[s].k for s in inst.scenario_ids if s in clusterings}
    return clusterings, {"source": source, "k": resolved}


def _solution_payload(sol: solver.Solution) -> dict:
    return {
        "status": sol.status,
        "objective": sol.objective,
        "best_bound": sol.best_bound,
        "gap": sol.gap,
        "wall_time_s": sol.wall_time_s,
        "diagnostics": sol.diagnostics,
        "values": {k: v for k, v in sol.values.items() if abs(v) > 1e-12},
    }


def _gap_text(gap: float) -> str:
    return f"{gap:.2%}" if math.isfinite(gap) else "unknown"


def _write_metrics_csv(path: Path, metrics: dict, scenario_order) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["scenario", "U", "G", "degenerate"])
        for sid in scenario_order:
            if sid not in metrics:
                continue
            m = metrics[sid]
            writer.writerow(
                [sid, f"{m.U:.10g}", "" if m.G is None else f"{m.G:.10g}",
                 int(m.degenerate)]
            )


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Stochastic prepositioning models with equity-aware objectives."""


@cli.command("run")
@click.argument("instance_path", metavar="INSTANCE",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("formulation", type=click.Choice(sim.FORMULATIONS))
@click.option("--time-limit", type=float, default=3600.0, show_default=True,
              help="solver wall clock cap in seconds")
@click.option("--gap", type=float, default=1e-5, show_default=True,
              help="relative MIP gap target")
@click.option("--seed", type=int, default=0, show_default=True,
              help="solver and clustering seed")
@click.option("--clusters", default=None, metavar="K1,K2,...",
              help="cluster count per scenario (ginic only)")
@click.option("--no-valid-inequality", is_flag=True,
              help="drop the upper-bounding Lorenz cut from the gini model")
@click.option("--lp-relax", is_flag=True,
              help="solve the LP relaxation and report its value only")
@click.option("--repro", is_flag=True,
              help="deterministic mode: single-thread solves")
@click.option("--solver-path", default=None, metavar="EXE",
              help="external MIP solver executable (env: EQUILOX_SOLVER)")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="output directory [default: out/<timestamp>-<formulation>]")
def cmd_run(instance_path, formulation, time_limit, gap, seed, clusters,
            no_valid_inequality, lp_relax, repro, solver_path, out_dir):
    """Build one formulation, solve it, write plan + per-scenario metrics."""
    inst, demand = _load_checked(instance_path)

    clusterings, cluster_info = None, {}
    if formulation == "ginic":
        clusterings, cluster_info = _clusterings_for(inst, demand, clusters, seed)
    elif clusters is not None:
        raise click.UsageError("--clusters only applies to the ginic formulation")

    try:
        params = solver.SolveParams(
            time_limit_s=time_limit, rel_gap=gap,
            threads=1 if repro else 0, seed=seed, lp_relaxation=lp_relax,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))

    model = models.build_formulation(
        formulation, inst, demand,
        clusterings=clusterings,
        valid_inequality=not no_valid_inequality,
    )

    out = _resolve_out(out_dir, formulation)
    manifest = RunManifest(
        command="run",
        replay=["run", str(instance_path), formulation,
                "--time-limit", str(time_limit), "--gap", str(gap),
                "--seed", str(seed)]
               + (["--clusters", clusters] if clusters else [])
               + (["--no-valid-inequality"] if no_valid_inequality else [])
               + (["--lp-relax"] if lp_relax else [])
               + (["--repro"] if repro else [])
               + (["--out", str(out)]),
        instance_path=str(instance_path),
        instance_sha256=_sha256(instance_path),
        formulations=(formulation,),
        params=params.to_json_dict(),
        seeds={"solve": seed, "clustering": seed},
        clusters=cluster_info,
        repro=repro,
        backend=_backend_label(solver_path),
        created_utc=_now(),
    )
    manifest.write(out)

    try:
        sol = solver.solve(model, params, solver_path=solver_path)
        _write_json(out / "solution.json", _solution_payload(sol))
        manifest.artifacts["solution"] = "solution.json"

        if not sol.feasible:
            raise SolverFailure(
                f"{formulation}: no solution ({sol.status}); "
                f"diagnostics: {sol.diagnostics}"
            )

        if lp_relax:
            click.echo(f"{formulation}: LP relaxation objective {sol.objective:.6f} "
                       f"({sol.status}, {sol.wall_time_s:.1f}s)")
        else:
            fs = models.FirstStage.from_solution(sol.values)
            _write_json(out / "first_stage.json", fs.to_json_dict())
            manifest.artifacts["first_stage"] = "first_stage.json"
            metrics = models.extract_metrics(sol, demand, formulation)
            _write_metrics_csv(out / "metrics.csv", metrics, inst.scenario_ids)
            manifest.artifacts["metrics"] = "metrics.csv"

            opens = fs.open_facilities()
            click.echo(f"{formulation}: {sol.status}, objective {sol.objective:.6f}, "
                       f"gap {_gap_text(sol.gap)}, {sol.wall_time_s:.1f}s")
            click.echo("open RFs (%d): %s" % (
                len(opens),
                ", ".join(f"{size}@{loc}" for size, loc in sorted(opens, key=lambda t: t[1]))
                or "none",
            ))
            used = [m for m in metrics.values() if not m.degenerate]
            if used:
                mean_u = sum(m.U for m in metrics.values()) / len(metrics)
                mean_g = sum(m.G for m in used) / len(used)
                click.echo(f"scenarios: mean U {mean_u:.4f}, mean G {mean_g:.4f} "
                           f"({len(metrics)} scenarios, "
                           f"{len(metrics) - len(used)} degenerate)")
        manifest.status = "ok"
    except SolverFailure as exc:
        manifest.status = "error"
        manifest.error = str(exc)
        raise
    finally:
        manifest.finished_utc = _now()
        manifest.write(out)
    click.echo(f"wrote {out}")


@cli.command("simulate")
@click.argument("instance_path", metavar="INSTANCE",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--formulation", "formulations", multiple=True,
              type=click.Choice(sim.FORMULATIONS),
              help="repeatable; default: all four")
@click.option("--count", type=int, default=100, show_default=True,
              help="number of demand realizations")
@click.option("--seed", type=int, default=0, show_default=True,
              help="sampling, solver and clustering seed")
@click.option("--time-limit", type=float, default=3600.0, show_default=True,
              help="cap for each full model solve, seconds")
@click.option("--eval-time-limit", type=float, default=sim.EVAL_TIME_LIMIT_S,
              show_default=True, help="cap for each per-realization solve")
@click.option("--gap", type=float, default=1e-5, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True,
              help="parallel per-realization solves")
@click.option("--clusters", default=None, metavar="K1,K2,...",
              help="cluster count per scenario for the ginic full model")
@click.option("--no-valid-inequality", is_flag=True,
              help="drop the upper-bounding Lorenz cut from gini models")
@click.option("--continuous-sampling", is_flag=True,
              help="sample fractional demands instead of integers")
@click.option("--effectiveness-recourse", is_flag=True,
              help="re-solve realizations with the plain coverage objective "
                   "instead of each formulation's own")
@click.option("--repro", is_flag=True,
              help="deterministic mode: jobs=1, single-thread solves")
@click.option("--solver-path", default=None, metavar="EXE",
              help="external MIP solver executable (env: EQUILOX_SOLVER)")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="output directory [default: out/<timestamp>-simulate]")
def cmd_simulate(instance_path, formulations, count, seed, time_limit,
                 eval_time_limit, gap, jobs, clusters, no_valid_inequality,
                 continuous_sampling, effectiveness_recourse, repro,
                 solver_path, out_dir):
    """Solve each formulation, then grade the plans on shared realizations."""
    inst, demand = _load_checked(instance_path)
    chosen = tuple(formulations) if formulations else sim.FORMULATIONS
    if count < 1:
        raise click.UsageError("--count must be >= 1")
    if repro:
        jobs = 1

    clusterings, cluster_info = None, {}
    if "ginic" in chosen:
        clusterings, cluster_info = _clusterings_for(inst, demand, clusters, seed)
    elif clusters is not None:
        raise click.UsageError("--clusters given but ginic is not simulated")

    try:
        full_params = solver.SolveParams(
            time_limit_s=time_limit, rel_gap=gap,
            threads=1 if repro else 0, seed=seed,
        )
        eval_params = solver.SolveParams(
            time_limit_s=eval_time_limit, rel_gap=gap,
            threads=1 if repro else 0, seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))

    out = _resolve_out(out_dir, "simulate")
    manifest = RunManifest(
        command="simulate",
        replay=["simulate", str(instance_path)]
               + [x for f in chosen for x in ("--formulation", f)]
               + ["--count", str(count), "--seed", str(seed),
                  "--time-limit", str(time_limit),
                  "--eval-time-limit", str(eval_time_limit),
                  "--gap", str(gap), "--jobs", str(jobs)]
               + (["--clusters", clusters] if clusters else [])
               + (["--no-valid-inequality"] if no_valid_inequality else [])
               + (["--continuous-sampling"] if continuous_sampling else [])
               + (["--effectiveness-recourse"] if effectiveness_recourse else [])
               + (["--repro"] if repro else [])
               + ["--out", str(out)],
        instance_path=str(instance_path),
        instance_sha256=_sha256(instance_path),
        formulations=chosen,
        params={"full": full_params.to_json_dict(),
                "eval": eval_params.to_json_dict()},
        seeds={"sampling": seed, "solve": seed, "clustering": seed},
        clusters=cluster_info,
        sampling={"count": count, "continuous": continuous_sampling,
                  "recourse": "effectiveness" if effectiveness_recourse else "own"},
        repro=repro,
        backend=_backend_label(solver_path),
        created_utc=_now(),
    )
    manifest.write(out)

    try:
        try:
            result = sim.run_simulation(
                inst, demand, chosen, count=count, seed=seed,
                full_params=full_params, eval_params=eval_params,
                own_recourse=not effectiveness_recourse,
                clusterings=clusterings,
                valid_inequality=not no_valid_inequality,
                continuous=continuous_sampling,
                solver_path=solver_path, jobs=jobs, echo=click.echo,
            )
        except sim.PlanSolveError as exc:
            raise SolverFailure(str(exc)) from exc

        for name in chosen:
            _write_json(out / f"first_stage_{name}.json",
                        result.plans[name].to_json_dict())
            manifest.artifacts[f"first_stage_{name}"] = f"first_stage_{name}.json"

        with open(out / "full_solve.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["formulation", "status", "objective", "best_bound",
                             "gap", "wall_time_s", "open_rfs"])
            for name in chosen:
                sol = result.full_solutions[name]
                opens = result.plans[name].open_facilities()
                writer.writerow(
                    [name, sol.status, f"{sol.objective:.10g}",
                     "" if sol.best_bound is None or not math.isfinite(sol.best_bound)
                     else f"{sol.best_bound:.10g}",
                     "" if not math.isfinite(sol.gap) else f"{sol.gap:.6g}",
                     f"{sol.wall_time_s:.2f}",
                     ";".join(f"{size}@{loc}" for size, loc in
                              sorted(opens, key=lambda t: t[1]))])
        manifest.artifacts["full_solve"] = "full_solve.csv"

        paths = sim.summarize(result.all_records(), out)
        for label, path in paths.items():
            manifest.artifacts[label] = path.name
        manifest.status = "ok"
    except SolverFailure as exc:
        manifest.status = "error"
        manifest.error = str(exc)
        raise
    finally:
        manifest.finished_utc = _now()
        manifest.write(out)
    click.echo(f"wrote {out}")


@cli.command("validate")
@click.argument("instance_path", metavar="INSTANCE",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="output directory [default: out/<timestamp>-validate]")
def cmd_validate(instance_path, out_dir):
    """Check an instance file; list every violated invariant."""
    findings: list[str]
    try:
        inst = load_instance(instance_path)
    except Exception as exc:
        findings = [f"load: {exc}"]
    else:
        findings = validate_instance(inst)

    out = _resolve_out(out_dir, "validate")
    manifest = RunManifest(
        command="validate",
        replay=["validate", str(instance_path), "--out", str(out)],
        instance_path=str(instance_path),
        instance_sha256=_sha256(instance_path),
        created_utc=_now(),
        status="ok" if not findings else "invalid",
    )
    with open(out / "findings.txt", "w", encoding="utf-8") as handle:
        for line in findings:
            handle.write(line + "\n")
    manifest.artifacts["findings"] = "findings.txt"
    manifest.finished_utc = _now()
    manifest.write(out)

    if findings:
        for line in findings:
            click.echo(line)
        raise ValidationFailure(f"{len(findings)} finding(s)")
    click.echo("instance ok")
    click.echo(f"wrote {out}")


def main(argv=None) -> int:
    """Entry point with the documented exit codes (0/1/2/3)."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except (ValidationFailure, SolverFailure) as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
