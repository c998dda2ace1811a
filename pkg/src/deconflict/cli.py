"""Command-line front end: generate, solve, bench, plot."""
from __future__ import annotations

import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import click

from .avoidance import AvoidanceSolution, InfeasibleError, solve_avoidance
from .instances import (Instance, InstanceError, ScenarioConfig, count_conflicts, generate_cp, generate_rcp,
                        load_instance, save_instance)
from .recovery import RecoveryInfeasibleError, RecoverySolution, recovery_tables, solve_exact, solve_greedy
from .trajectory import assemble, metrics, plot_svg, verify

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_USAGE = 4

CP_SIZES = tuple(range(4, 16))
RCP_SIZES = (10, 20, 30)


@dataclass
class RunResult:
    instance: Instance
    avoidance: Optional[AvoidanceSolution] = None
    recovery: Dict[str, RecoverySolution] = field(default_factory=dict)
    reports: Dict[str, dict] = field(default_factory=dict)
    error: Optional[str] = None
    exit_code: int = EXIT_OK


def run_pipeline(instance: Instance, methods=("exact", "greedy"), time_limit: float = 300.0,
                 step: float = 1.0, allow_hold: bool = True,
                 recovery_time_limit: Optional[float] = None) -> RunResult:
    res = RunResult(instance)
    if recovery_time_limit is None:
        recovery_time_limit = time_limit
    try:
        res.avoidance = solve_avoidance(instance, time_limit)
    except InfeasibleError as exc:
        res.error, res.exit_code = str(exc), EXIT_INFEASIBLE
        return res
    omega = recovery_tables(instance, res.avoidance, allow_hold)
    for method in methods:
        try:
            if method == "exact":
                rec = solve_exact(instance, res.avoidance, omega, recovery_time_limit)
            else:
                rec = solve_greedy(instance, res.avoidance, omega)
        except RecoveryInfeasibleError as exc:
            res.error, res.exit_code = str(exc), EXIT_INFEASIBLE
            continue
        res.recovery[method] = rec
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            trajs = assemble(instance, res.avoidance, rec)
        report = verify(trajs, instance.config.d, step)
        summary = report.to_dict()
        summary.update(metrics(trajs, res.avoidance, rec, instance))
        summary["method"] = method
        summary["avoidance_objective"] = res.avoidance.objective
        summary["recovery_objective"] = rec.objective
        summary["complete"] = bool(rec.stats.get("complete", True))
        res.reports[method] = summary
        if not report.ok and res.exit_code == EXIT_OK:
            res.exit_code = EXIT_VERIFY
    return res


def _workers() -> int:
    env = os.environ.get("DECONFLICT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, cap)


def _map(fn, items):
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _untimed(d: dict) -> dict:
    return {k: (0.0 if k == "runtime_s" else v) for k, v in d.items()}


@click.group()
def cli():
    """Two-stage aircraft conflict resolution."""


@cli.command()
@click.option("--kind", type=click.Choice(["cp", "rcp"]), required=True)
@click.option("--n", "n", type=click.IntRange(min=2), required=True, help="number of aircraft")
@click.option("--count", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def generate(kind, n, count, seed, out):
    """Write benchmark instances as JSON."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "cp":
        instances = [generate_cp(n)]
    else:
        instances = [generate_rcp(n, config=ScenarioConfig(seed=seed + k), name=f"RCP-{n}-{seed + k:04d}")
                     for k in range(count)]
    for inst in instances:
        save_instance(inst, out / f"{inst.name}.json")
        click.echo(f"{inst.name}: {count_conflicts(inst)} conflicts")


@cli.command()
@click.option("--instance", "instance_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["exact", "greedy", "both"]), default="both", show_default=True)
@click.option("--time-limit-s", type=click.FloatRange(min=0, min_open=True), default=300.0, show_default=True)
@click.option("--step-s", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--no-timing", is_flag=True, help="write runtime fields as 0 for reproducible output")
@click.option("--no-hold", is_flag=True, help="recover every aircraft within the period grid")
def solve(instance_path, method, time_limit_s, step_s, out, no_timing, no_hold):
    """Solve both stages and verify the resulting trajectories."""
    inst = load_instance(instance_path)
    methods = ("exact", "greedy") if method == "both" else (method,)
    res = run_pipeline(inst, methods, time_limit_s, step_s, not no_hold)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if res.avoidance is not None:
        data = res.avoidance.to_dict(inst)
        _write_json(out / "avoidance.json", _untimed(data) if no_timing else data)
        click.echo(f"avoidance objective {res.avoidance.objective:.6g} (optimal={res.avoidance.optimal})")
    for m, rec in res.recovery.items():
        data = rec.to_dict(inst)
        _write_json(out / f"recovery_{m}.json", _untimed(data) if no_timing else data)
        _write_json(out / f"verification_{m}.json", res.reports[m])
        rep = res.reports[m]
        click.echo(f"{m}: objective {rec.objective:.6g} periods {rec.period} "
                   f"min sep {rep['min_separation']} ok={rep['ok']}")
    if res.error:
        click.echo(f"error: {res.error}", err=True)
    sys.exit(res.exit_code)


CP_COLUMNS = ["A", "n_c", "av_obj", "av_time_s", "av_optimal",
              "er_obj", "er_time_s", "er_min", "er_mean", "er_max", "er_optimal",
              "gr_obj", "gr_time_s", "gr_min", "gr_mean", "gr_max", "gap_pct", "verified"]
RCP_COLUMNS = ["A", "instance", "n_c", "av_obj", "av_time_s", "av_optimal",
               "er_obj", "er_time_s", "er_optimal", "gr_obj", "gr_time_s", "gr_complete", "verified"]


@dataclass(frozen=True)
class _BenchJob:
    instance: Instance
    time_limit: float
    step: float
    allow_hold: bool = True


def _bench_row(job: _BenchJob) -> dict:
    inst = job.instance
    res = run_pipeline(inst, ("exact", "greedy"), job.time_limit, job.step, job.allow_hold)
    row = {"A": len(inst), "instance": inst.name, "n_c": count_conflicts(inst)}
    nan = float("nan")
    av = res.avoidance
    row.update(av_obj=av.objective if av else nan, av_time_s=av.stats.get("runtime", nan) if av else nan,
               av_optimal=bool(av and av.optimal))
    for key in ("exact", "greedy"):
        p = "er" if key == "exact" else "gr"
        rec = res.recovery.get(key)
        rep = res.reports.get(key, {})
        row[f"{p}_obj"] = rec.objective if rec else nan
        row[f"{p}_time_s"] = rec.stats.get("runtime", nan) if rec else nan
        row[f"{p}_min"] = rep.get("min_period", -1)
        row[f"{p}_mean"] = rep.get("mean_period", nan)
        row[f"{p}_max"] = rep.get("max_period", -1)
    row["er_optimal"] = bool(res.recovery.get("exact") and res.recovery["exact"].optimal)
    row["gr_complete"] = bool(res.reports.get("greedy", {}).get("complete", False))
    row["gap_pct"] = gap_percent(row["er_obj"], row["gr_obj"])
    row["verified"] = bool(res.reports) and all(r["ok"] for r in res.reports.values()) and res.error is None
    return row


def gap_percent(exact: float, greedy: float) -> float:
    if exact == greedy:
        return 0.0
    if not exact or math.isnan(exact) or math.isnan(greedy):
        return float("nan") if math.isnan(exact) or math.isnan(greedy) else math.inf
    return 100.0 * (greedy - exact) / exact


@cli.command()
@click.option("--suite", type=click.Choice(["cp", "rcp"]), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--sizes", type=str, default=None, help="comma-separated aircraft counts")
@click.option("--count", type=click.IntRange(min=1), default=100, show_default=True, help="RCP instances per size")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--time-limit-s", type=click.FloatRange(min=0, min_open=True), default=300.0, show_default=True)
@click.option("--step-s", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option("--no-timing", is_flag=True, help="write runtime columns as 0 for reproducible output")
@click.option("--no-hold", is_flag=True, help="recover every aircraft within the period grid")
def bench(suite, out, sizes, count, seed, time_limit_s, step_s, no_timing, no_hold):
    """Run a benchmark suite and write a CSV table."""
    try:
        size_list = tuple(int(s) for s in sizes.split(",")) if sizes else (CP_SIZES if suite == "cp" else RCP_SIZES)
    except ValueError:
        raise click.BadParameter("expected comma-separated integers", param_hint="--sizes")
    if suite == "cp":
        instances = [generate_cp(n) for n in size_list]
        columns = CP_COLUMNS
    else:
        instances = [generate_rcp(n, config=ScenarioConfig(seed=seed + k), name=f"RCP-{n}-{seed + k:04d}")
                     for n in size_list for k in range(count)]
        columns = RCP_COLUMNS
    rows = _map(_bench_row, [_BenchJob(i, time_limit_s, step_s, not no_hold) for i in instances])
    rows.sort(key=lambda r: (r["A"], r["instance"]))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{suite}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if no_timing:
                row = {k: (0.0 if k.endswith("_time_s") else v) for k, v in row.items()}
            writer.writerow([_fmt(row[c]) for c in columns])
    bad = sum(not r["verified"] for r in rows)
    click.echo(f"wrote {len(rows)} rows to {path}; {bad} unverified")
    sys.exit(EXIT_VERIFY if bad else EXIT_OK)


@cli.command()
@click.option("--instance", "instance_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--solution-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--method", type=click.Choice(["exact", "greedy"]), default="exact", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def plot(instance_path, solution_dir, method, out):
    """Render solved trajectories as SVG."""
    inst = load_instance(instance_path)
    sol = Path(solution_dir)
    av = AvoidanceSolution.from_dict(json.loads((sol / "avoidance.json").read_text()), inst)
    rec = RecoverySolution.from_dict(json.loads((sol / f"recovery_{method}.json").read_text()))
    Path(out).write_text(plot_svg(inst, assemble(inst, av, rec)))


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="deconflict", standalone_mode=False)
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except (InstanceError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
