"""Command-line front end: instance generation, solving, evaluation, the
batch benchmark, and plot-data export.

Subcommands
    gen       write a random fleet instance as JSON
    solve     run one solver on an instance against a constant demand
    ub        print the analytic horizon ceiling for an (instance, alpha)
    eval      score a solution file into a report JSON
    bench     run a (machines x alphas x seeds x solvers) sweep to CSV
    plotdata  split a bench CSV into plot-ready files, plus per-machine
              contribution traces for a single solution

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .domain import (
    DemandProfile,
    DomainError,
    FleetInstance,
    FmaxParams,
    SolveResult,
    demand_from_dict,
    instance_from_dict,
    instance_to_dict,
    schedule_from_dict,
)
from .evaluation import report, upper_bound
from .generator import GeneratorConfig, constant_demand, generate_fleet, nominal_total
from .mirrorprox import MirrorProxConfig, solve_mirror_prox
from .projections import ProjectionConfig, solve_projections

__all__ = ["BenchPlan", "run_bench", "emit_plotdata", "main", "entrypoint"]

SOLVER_NAMES = ("projections", "mirror-prox")

CSV_HEADER = (
    "m,alpha,seed,solver,horizon,ub,normalized_horizon,iterations,"
    "wall_time_ms,unmet_slots,overproduction_Wh,status"
)

# Decision horizons are overestimates of any reachable production horizon;
# 1.2 * UB guarantees slack since H <= UB.
HORIZON_FACTOR = 1.2


@dataclass(frozen=True)
class BenchPlan:
    """One benchmark sweep: the cartesian product of machine counts, load
    factors, seeds, and solvers, each with a per-run wall-time budget.

    The projections lane defaults to 512-slot intervals: the published
    benchmark schedules for that method are piecewise-constant, and at
    per-slot resolution its demand-scale stopping rule quits far short of
    the reported relative horizons on 25-machine fleets.  Library callers
    who want per-slot resolution pass their own ProjectionConfig.
    """

    machine_counts: tuple[int, ...] = (3, 25)
    alphas: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seeds: tuple[int, ...] = tuple(range(1, 21))
    solvers: tuple[str, ...] = SOLVER_NAMES
    budget_s: float = 1800.0
    jobs: int = 1
    stable_timing: bool = False
    projection_cfg: ProjectionConfig = field(
        default_factory=lambda: ProjectionConfig(delta_t=512)
    )
    mirror_cfg: MirrorProxConfig = field(default_factory=MirrorProxConfig)

    def __post_init__(self):
        if not self.machine_counts or not self.alphas or not self.seeds or not self.solvers:
            raise DomainError("bench plan lists must be non-empty")
        unknown = set(self.solvers) - set(SOLVER_NAMES)
        if unknown:
            raise DomainError(f"unknown solvers: {sorted(unknown)}")
        if not self.budget_s > 0:
            raise DomainError(f"budget must be > 0, got {self.budget_s}")
        if self.jobs < 1:
            raise DomainError(f"jobs must be >= 1, got {self.jobs}")

    def runs(self) -> list[tuple[int, float, int, str]]:
        return [
            (m, alpha, seed, solver)
            for m in self.machine_counts
            for alpha in self.alphas
            for seed in self.seeds
            for solver in self.solvers
        ]


def decision_horizon(instance: FleetInstance, alpha: float) -> int:
    """T = ceil(1.2 * UB) for the constant demand alpha * Pnom_tot."""
    sigma = alpha * nominal_total(instance, 0.75)
    return math.ceil(HORIZON_FACTOR * upper_bound(instance, sigma))


def run_solver(
    solver: str,
    instance: FleetInstance,
    demand: DemandProfile,
    projection_cfg: ProjectionConfig,
    mirror_cfg: MirrorProxConfig,
) -> SolveResult:
    if solver == "projections":
        return solve_projections(instance, demand, projection_cfg)
    if solver == "mirror-prox":
        return solve_mirror_prox(instance, demand, mirror_cfg)
    raise DomainError(f"unknown solver {solver!r}")


def _bench_one(args: tuple) -> tuple:
    m, alpha, seed, solver, projection_cfg, mirror_cfg = args
    instance = generate_fleet(GeneratorConfig(m=m, seed=seed))
    sigma = alpha * nominal_total(instance, 0.75)
    ub = upper_bound(instance, sigma)
    horizon_t = math.ceil(HORIZON_FACTOR * ub)
    demand = constant_demand(instance, alpha, horizon_t)
    if projection_cfg.delta_t > demand.slots:
        projection_cfg = replace(projection_cfg, delta_t=demand.slots)
    result = run_solver(solver, instance, demand, projection_cfg, mirror_cfg)
    rep = report(result.schedule, demand, instance)
    return (rep.horizon, ub, rep.normalized_horizon, result.iterations,
            result.wall_time_ms, rep.unmet_slots, rep.overproduction_energy)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_bench(plan: BenchPlan, progress=None) -> str:
    """Execute a plan and return the result CSV (data rows in plan order,
    then a '#'-prefixed summary block of per-solver normalized horizons).

    Runs are pure functions of their (m, alpha, seed, solver) coordinates,
    so the data columns are identical across repetitions and --jobs
    settings; wall_time_ms is the one nondeterministic column and is pinned
    to 0 when the plan sets stable_timing.
    """
    runs = plan.runs()
    work = [(m, a, s, solver, plan.projection_cfg, plan.mirror_cfg)
            for (m, a, s, solver) in runs]
    if plan.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            outcomes = list(pool.map(_bench_one, work))
    else:
        outcomes = []
        for i, w in enumerate(work):
            outcomes.append(_bench_one(w))
            if progress:
                progress(i + 1, len(work))

    lines = [CSV_HEADER]
    by_solver: dict[str, list[float]] = {s: [] for s in plan.solvers}
    for (m, alpha, seed, solver), out in zip(runs, outcomes):
        horizon, ub, normalized, iterations, wall_ms, unmet, over = out
        status = "timeout" if wall_ms > plan.budget_s * 1e3 else "ok"
        shown_ms = 0.0 if plan.stable_timing else wall_ms
        lines.append(",".join([
            str(m), repr(float(alpha)), str(seed), solver,
            str(horizon), str(ub), _fmt(normalized), str(iterations),
            f"{shown_ms:.3f}", str(unmet), _fmt(over), status,
        ]))
        if normalized is not None:
            by_solver[solver].append(normalized)
    lines.append("# summary")
    lines.append("# solver,mean_normalized_horizon,min_normalized_horizon,max_normalized_horizon")
    for solver in plan.solvers:
        vals = by_solver[solver]
        if vals:
            mean = sum(vals) / len(vals)
            lines.append(f"# {solver},{_fmt(mean)},{_fmt(min(vals))},{_fmt(max(vals))}")
        else:
            lines.append(f"# {solver},,,")
    return "\n".join(lines) + "\n"


def parse_bench_csv(text: str) -> tuple[list[str], list[list[str]]]:
    """Split a bench CSV into (header columns, data rows), skipping the
    summary block.  Raises DomainError naming the offending line."""
    lines = text.splitlines()
    if not lines:
        raise DomainError("line 1: empty CSV")
    header = lines[0].split(",")
    if header != CSV_HEADER.split(","):
        raise DomainError(f"line 1: unexpected header {lines[0]!r}")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise DomainError(f"line {i}: expected {len(header)} fields, got {len(cells)}")
        rows.append(cells)
    return header, rows


def emit_plotdata(csv_text: str, out_dir: str | Path, solution: dict | None = None) -> list[Path]:
    """Write plot-ready files from a bench CSV: normalized horizon vs alpha
    and wall time vs alpha (one row per run, per solver), plus per-machine
    output and capacity traces when a solution document is supplied."""
    header, rows = parse_bench_csv(csv_text)
    col = {name: k for k, name in enumerate(header)}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    horizon_path = out_dir / "normalized_horizon_vs_alpha.csv"
    with horizon_path.open("w") as fh:
        fh.write("alpha,solver,normalized_horizon\n")
        for r in rows:
            fh.write(f"{r[col['alpha']]},{r[col['solver']]},{r[col['normalized_horizon']]}\n")
    written.append(horizon_path)

    time_path = out_dir / "wall_time_vs_alpha.csv"
    with time_path.open("w") as fh:
        fh.write("alpha,solver,wall_time_ms\n")
        for r in rows:
            fh.write(f"{r[col['alpha']]},{r[col['solver']]},{r[col['wall_time_ms']]}\n")
    written.append(time_path)

    if solution is not None:
        schedule = schedule_from_dict(solution)
        fmax = np.array(solution.get("fmax", []), dtype=float)
        if fmax.shape != schedule.f.shape:
            raise DomainError("solution fmax missing or shaped unlike the schedule")
        m = schedule.m
        trace_path = out_dir / "contribution_traces.csv"
        with trace_path.open("w") as fh:
            cols = ["time"] + [f"f_{j}" for j in range(1, m + 1)] + [f"fmax_{j}" for j in range(1, m + 1)]
            fh.write(",".join(cols) + "\n")
            for t in range(schedule.slots):
                cells = [str(t)] + [repr(float(v)) for v in schedule.f[:, t]] \
                        + [repr(float(v)) for v in fmax[:, t]]
                fh.write(",".join(cells) + "\n")
        written.append(trace_path)
    return written


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_fmax_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu", type=float, default=0.2, help="capacity usage-response factor")
    p.add_argument("--upsilon", type=float, default=0.3, help="capacity usage-response exponent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fleetsched",
                                     description="Schedule degrading power units against a demand profile.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a random fleet instance")
    p_gen.add_argument("--machines", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--rul-center", type=float, default=1500.0)
    p_gen.add_argument("--rul-spread", type=float, default=0.20)
    p_gen.add_argument("--pmax-center", type=float, default=500.0)
    p_gen.add_argument("--pmax-spread", type=float, default=0.05)
    p_gen.add_argument("--pmin-ratio", type=float, default=0.15)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--quiet", action="store_true")

    p_solve = sub.add_parser("solve", help="solve one instance against a constant demand")
    p_solve.add_argument("--solver", choices=SOLVER_NAMES, required=True)
    p_solve.add_argument("--instance", required=True)
    p_solve.add_argument("--alpha", type=float, required=True)
    p_solve.add_argument("--horizon", type=int, default=None,
                         help="decision horizon T (default ceil(1.2*UB))")
    p_solve.add_argument("--epsilon-factor", type=float, default=0.1)
    p_solve.add_argument("--max-iters", type=int, default=None)
    p_solve.add_argument("--delta-t", type=int, default=1, help="projection interval length")
    p_solve.add_argument("--lambda-step", type=float, default=5e-5)
    p_solve.add_argument("--lambda-dem", type=float, default=100.0)
    p_solve.add_argument("--lambda-slope", type=float, default=100.0)
    p_solve.add_argument("--gamma", type=float, default=100.0)
    p_solve.add_argument("--delta", type=float, default=100.0)
    p_solve.add_argument("--mu-prime", type=float, default=1.0)
    p_solve.add_argument("--upsilon-prime", type=float, default=1.0)
    p_solve.add_argument("--w-grad", type=float, default=1.0)
    p_solve.add_argument("--f-floor", type=float, default=1e-8)
    _add_fmax_flags(p_solve)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--quiet", action="store_true")

    p_ub = sub.add_parser("ub", help="print the analytic horizon ceiling")
    p_ub.add_argument("--instance", required=True)
    p_ub.add_argument("--alpha", type=float, required=True)

    p_eval = sub.add_parser("eval", help="score a solution file")
    p_eval.add_argument("--instance", required=True)
    p_eval.add_argument("--solution", required=True)
    p_eval.add_argument("--tol", type=float, default=1e-6)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--quiet", action="store_true")

    p_bench = sub.add_parser("bench", help="run a benchmark sweep to CSV")
    p_bench.add_argument("--machines", default="3,25", help="comma list of machine counts")
    p_bench.add_argument("--alphas", default="0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p_bench.add_argument("--seeds", default=None,
                         help="comma list of seeds (default 1..num-seeds)")
    p_bench.add_argument("--num-seeds", type=int, default=20)
    p_bench.add_argument("--solvers", default="projections,mirror-prox")
    p_bench.add_argument("--budget", type=float, default=1800.0, help="per-run budget, seconds")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--stable-timing", action="store_true",
                         help="write wall_time_ms as 0 so CSV bytes are reproducible")
    p_bench.add_argument("--max-iters", type=int, default=None,
                         help="override max iterations for both solvers")
    p_bench.add_argument("--delta-t", type=int, default=512,
                         help="projection interval length for the bench lane "
                              "(clamped to the horizon per run)")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--quiet", action="store_true")

    p_plot = sub.add_parser("plotdata", help="emit plot-ready CSV files")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out-dir", required=True)
    p_plot.add_argument("--solution", default=None,
                        help="solution JSON for per-machine trace export")
    p_plot.add_argument("--quiet", action="store_true")

    return parser


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def _downsample(trace, cap: int = 1000) -> list[float]:
    if trace is None:
        return []
    if len(trace) <= cap:
        return list(trace)
    idx = np.unique(np.linspace(0, len(trace) - 1, cap).round().astype(int))
    return [trace[i] for i in idx]


def _cmd_gen(args) -> int:
    cfg = GeneratorConfig(
        m=args.machines, seed=args.seed,
        rul_center=args.rul_center, rul_spread=args.rul_spread,
        pmax_center=args.pmax_center, pmax_spread=args.pmax_spread,
        pmin_ratio=args.pmin_ratio,
    )
    instance = generate_fleet(cfg)
    _write_json(args.out, instance_to_dict(instance))
    if not args.quiet:
        print(f"wrote {args.out}: m={instance.m}, seed={instance.seed}", file=sys.stderr)
    return 0


def _cmd_solve(args) -> int:
    instance = instance_from_dict(_load_json(args.instance))
    horizon_t = args.horizon if args.horizon is not None else decision_horizon(instance, args.alpha)
    demand = constant_demand(instance, args.alpha, horizon_t)
    fmax_params = FmaxParams(mu=args.mu, upsilon=args.upsilon)
    if args.solver == "projections":
        cfg = ProjectionConfig(
            delta_t=args.delta_t,
            epsilon_factor=args.epsilon_factor,
            max_iters=args.max_iters if args.max_iters is not None else 10_000,
            fmax_params=fmax_params,
        )
        result = solve_projections(instance, demand, cfg)
    else:
        cfg = MirrorProxConfig(
            lambda_step=args.lambda_step,
            lambda_dem=args.lambda_dem,
            lambda_slope=args.lambda_slope,
            gamma=args.gamma,
            delta=args.delta,
            mu_prime=args.mu_prime,
            upsilon_prime=args.upsilon_prime,
            w_grad=args.w_grad,
            epsilon_factor=args.epsilon_factor,
            max_iters=args.max_iters if args.max_iters is not None else 50_000,
            f_floor=args.f_floor,
            fmax_params=fmax_params,
        )
        result = solve_mirror_prox(instance, demand, cfg)
    doc = {
        "solver": args.solver,
        "alpha": args.alpha,
        "horizon": horizon_t,
        "demand": demand.values.tolist(),
        "schedule": [row.tolist() for row in result.schedule.f],
        "fmax": [row.tolist() for row in result.fmax.fmax],
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "wall_time_ms": result.wall_time_ms,
    }
    if result.objective_trace is not None:
        doc["objective_trace"] = _downsample(result.objective_trace)
    _write_json(args.out, doc)
    if not args.quiet:
        print(
            f"{args.solver}: iterations={result.iterations} stop={result.stop_reason} "
            f"wall={result.wall_time_ms:.0f}ms -> {args.out}",
            file=sys.stderr,
        )
    return 0


def _cmd_ub(args) -> int:
    instance = instance_from_dict(_load_json(args.instance))
    sigma = args.alpha * nominal_total(instance, 0.75)
    print(upper_bound(instance, sigma))
    return 0


def _cmd_eval(args) -> int:
    instance = instance_from_dict(_load_json(args.instance))
    sol = _load_json(args.solution)
    demand = demand_from_dict(sol)
    schedule = schedule_from_dict(sol)
    rep = report(schedule, demand, instance, tol=args.tol)
    _write_json(args.out, {
        "horizon": rep.horizon,
        "upper_bound": rep.upper_bound,
        "normalized_horizon": rep.normalized_horizon,
        "unmet_slots": rep.unmet_slots,
        "overproduction_energy": rep.overproduction_energy,
        "machine_starts": list(rep.machine_starts),
    })
    if not args.quiet:
        print(f"horizon={rep.horizon} ub={rep.upper_bound} -> {args.out}", file=sys.stderr)
    return 0


def _parse_list(text: str, conv):
    items = [s for s in text.split(",") if s.strip()]
    return tuple(conv(s) for s in items)


def _cmd_bench(args, parser: argparse.ArgumentParser) -> int:
    solvers = _parse_list(args.solvers, str)
    if not solvers:
        parser.error("empty solver set")
    seeds = _parse_list(args.seeds, int) if args.seeds else tuple(range(1, args.num_seeds + 1))
    projection_cfg = ProjectionConfig(
        delta_t=args.delta_t,
        max_iters=args.max_iters if args.max_iters is not None else 10_000,
    )
    mirror_cfg = MirrorProxConfig(
        max_iters=args.max_iters if args.max_iters is not None else 50_000,
    )
    try:
        plan = BenchPlan(
            machine_counts=_parse_list(args.machines, int),
            alphas=_parse_list(args.alphas, float),
            seeds=seeds,
            solvers=solvers,
            budget_s=args.budget,
            jobs=args.jobs,
            stable_timing=args.stable_timing,
            projection_cfg=projection_cfg,
            mirror_cfg=mirror_cfg,
        )
    except DomainError as exc:
        parser.error(str(exc))
    progress = None
    if not args.quiet:
        def progress(done, total):
            print(f"bench: {done}/{total} runs complete", file=sys.stderr)
    csv_text = run_bench(plan, progress=progress)
    Path(args.out).write_text(csv_text)
    if not args.quiet:
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_plotdata(args) -> int:
    csv_text = Path(args.csv).read_text()
    solution = _load_json(args.solution) if args.solution else None
    written = emit_plotdata(csv_text, args.out_dir, solution)
    if not args.quiet:
        for path in written:
            print(f"wrote {path}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "ub":
            return _cmd_ub(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "bench":
            return _cmd_bench(args, parser)
        if args.command == "plotdata":
            return _cmd_plotdata(args)
        parser.error(f"unknown command {args.command!r}")
    except (DomainError, OSError, json.JSONDecodeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
