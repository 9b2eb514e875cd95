"""Command-line front end.

    leadquote solve base.txt --problem provider-dynamic
    leadquote sweep base.txt --axis p --grid 5:14:1 --csv fees.csv
    leadquote quote-table base.txt --csv quotes.csv
    leadquote simulate base.txt --problem social-single --seed 7
    leadquote min-capacity base.txt --d-grid 0:2:0.1 --r 0,0.1,0.5

CSV files start with '#' provenance lines (tool version, command, scenario
hash and canonical scenario) followed by one header row.  Numbers are
written in full precision and infinite quotes as ``inf``.  Schemas:

    solve         problem, n_star, objective, n, quote, utility, entrant_profit, weight
    sweep         <axis>, n_lo, n_hi, then per problem tag T in (P, Pc, S, Sc):
                  n_T, obj_T, quotes_T [, sim_T, sim_hw_T with --with-sim]
                  (quotes_T lists the quotes of joining states, ';'-separated)
    quote-table   n, provider-dynamic, provider-single, social-dynamic, social-single
                  ('-' marks the balking state, empty cells lie beyond it)
    min-capacity  d, mu_min_r<r> for each requested r

Terminal tables cut numbers to 2 decimals.  The default worker count for
sweeps comes from the LEADQUOTE_THREADS environment variable.

Exit codes: 0 success, 1 bad input (parse error, invalid policy file),
2 infeasible service (mu <= r(c - l)).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence, TextIO

from . import __version__
from .experiments import (
    BALK,
    NoCapacityError,
    SweepSpec,
    min_capacity_curves,
    quote_summary,
    quote_table,
    run_sweep,
)
from .optimize import (
    InvalidPolicyError,
    Problem,
    QuotationPolicy,
    SolveResult,
    truncate,
    eval_profit_rate,
    eval_social_rate,
    solve,
)
from .dist import stationary_dist
from .quotes import threshold_bounds
from .scenario_file import ScenarioFile, ScenarioFileError, canonical, load, parse_grid
from .sim import simulate
from .utility import INF, InfeasibleServiceError, Scenario, expected_lateness

EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
PROBLEM_NAMES = [p.value for p in Problem]


def _fmt(d, digits: int = 2) -> str:
    if d is None:
        return ""
    if isinstance(d, str):
        return d
    return truncate(d, digits)


def _csv_value(d) -> str:
    if isinstance(d, (str, int)):
        return str(d)
    if d == INF:
        return "inf"
    return repr(float(d))


def _provenance(sf: ScenarioFile, command: str) -> list[str]:
    return [
        f"# leadquote {__version__}",
        f"# command {command}",
        f"# scenario {sf.digest} {canonical(sf.scenario)}",
    ]


def _write_csv(path: str, header_lines: list[str], columns: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_value(v) for v in row])


def _problems(arg: str | None, sf: ScenarioFile) -> list[Problem]:
    if arg in (None, "all"):
        return [sf.problem] if (arg is None and sf.problem) else list(Problem)
    return [Problem(name.strip()) for name in arg.split(",")]


def _bounds_text(s: Scenario) -> str:
    b = threshold_bounds(s)
    return f"[{b.lower}, {'inf' if b.upper == INF else b.upper}]"


def render_result(res: SolveResult, out: TextIO) -> None:
    out.write(f"{res.problem.value}: {res.summary()}\n")
    out.write("  n   quote      B_n      G_n   q(n;n0)\n")
    for st in res.per_state:
        tag = "  balk" if st.n == res.threshold else ""
        out.write(
            f"  {st.n:<3d} {_fmt(st.quote):>6} {_fmt(st.utility, 4):>8} {_fmt(st.profit, 4):>8} {st.weight:9.4f}{tag}\n"
        )
    for note in res.notes:
        out.write(f"  note: {note}\n")


def cmd_solve(args, out: TextIO) -> int:
    sf = load(args.scenario)
    s = sf.scenario
    out.write(f"bounds {_bounds_text(s)}\n")
    span = sf.solver.get("span")
    results = [solve(s, p, span) for p in _problems(args.problem, sf)]
    for res in results:
        render_result(res, out)
    if args.csv:
        rows = []
        for res in results:
            for st in res.per_state:
                rows.append([res.problem.value, res.threshold, res.objective, st.n, st.quote, st.utility, st.profit, st.weight])
        _write_csv(
            args.csv,
            _provenance(sf, "solve"),
            ["problem", "n_star", "objective", "n", "quote", "utility", "entrant_profit", "weight"],
            rows,
        )
    if args.policy_out:
        if len(results) != 1:
            raise ScenarioFileError("--policy-out needs a single --problem", args.scenario)
        res = results[0]
        record = {
            "leadquote": __version__,
            "problem": res.problem.value,
            "scenario": {k: getattr(s, k) for k in ("R", "p", "c", "l", "r", "lam", "mu")},
            "policy": res.policy.to_dict(),
            "objective": res.objective,
        }
        Path(args.policy_out).write_text(json.dumps(record, indent=2) + "\n")
    return 0


def cmd_sweep(args, out: TextIO) -> int:
    sf = load(args.scenario)
    axis = args.axis or sf.sweep.get("axis")
    grid_text = args.grid or sf.sweep.get("grid")
    if not axis or not grid_text:
        raise ScenarioFileError("sweep needs --axis and --grid (or a [sweep] section)", args.scenario)
    problems = _problems(args.problems or sf.sweep.get("problems") or "all", sf)
    spec_kwargs = {}
    if args.with_sim:
        spec_kwargs["sim_config"] = sf.sim_config(seed=args.seed)
    spec = SweepSpec(sf.scenario, axis, tuple(parse_grid(grid_text)), tuple(problems), args.with_sim, **spec_kwargs)
    result = run_sweep(spec, args.workers)
    columns = [axis, "n_lo", "n_hi"]
    for p in problems:
        tag = p.label
        columns += [f"n_{tag}", f"obj_{tag}", f"quotes_{tag}"]
        if args.with_sim:
            columns += [f"sim_{tag}", f"sim_hw_{tag}"]
    rows = []
    for row in result.rows:
        b = row.bounds
        line = [row.value, b.lower if b else 0, (b.upper if b else 0)]
        for p in problems:
            res = row.results.get(p)
            line += [row.threshold(p), row.objective(p), quote_summary(res)]
            if args.with_sim:
                est = row.sim.get(p)
                ci = (est.social_rate if p.social else est.profit_rate) if est else None
                line += [ci.mean if ci else "", ci.half_width if ci else ""]
        rows.append(line)
    out.write("  ".join(f"{c:>10}" for c in columns if not c.startswith("quotes_")) + "\n")
    for line in rows:
        cells = [v for c, v in zip(columns, line) if not c.startswith("quotes_")]
        out.write("  ".join(f"{_fmt(v) if isinstance(v, float) else v:>10}" for v in cells) + "\n")
    if args.csv:
        _write_csv(args.csv, _provenance(sf, f"sweep {axis} {grid_text}"), columns, rows)
    return 0


def cmd_quote_table(args, out: TextIO) -> int:
    sf = load(args.scenario)
    table = quote_table(sf.scenario)
    problems = list(Problem)
    header = ["n"] + [p.value for p in problems]
    out.write("  ".join(f"{h:>16}" for h in header) + "\n")
    rows = []
    for n, row in enumerate(table.rows):
        cells = [row[p] for p in problems]
        rows.append([n] + ["" if c is None else c for c in cells])
        out.write("  ".join([f"{n:>16}"] + [f"{_fmt(c):>16}" for c in cells]) + "\n")
    for p in problems:
        out.write(f"{table.results[p].summary()}\n")
    if args.csv:
        _write_csv(args.csv, _provenance(sf, "quote-table") + [f"# '{BALK}' marks the balking state"], header, rows)
    return 0


def _load_policy(path: str, s: Scenario) -> tuple[QuotationPolicy, Problem | None]:
    try:
        record = json.loads(Path(path).read_text())
        policy = QuotationPolicy.from_dict(record["policy"])
        problem = Problem(record["problem"]) if "problem" in record else None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidPolicyError(f"{path}: unreadable policy file ({exc})") from None
    return policy, problem


def cmd_simulate(args, out: TextIO) -> int:
    sf = load(args.scenario)
    s = sf.scenario
    if args.policy:
        policy, problem = _load_policy(args.policy, s)
    else:
        problem = Problem(args.problem) if args.problem else (sf.problem or Problem.PROVIDER_DYNAMIC)
        policy = solve(s, problem, sf.solver.get("span")).policy
    cfg = sf.sim_config(
        seed=args.seed, replications=args.replications, horizon=args.horizon, warmup=args.warmup,
        batch_count=args.batches,
    )
    est = simulate(s, policy, cfg)
    profit, social = eval_profit_rate(s, policy), eval_social_rate(s, policy)
    q = stationary_dist(policy.threshold, s.lam, s.mu) if policy.threshold else [1.0]
    label = problem.value if problem else "policy file"
    out.write(f"{label}: threshold {policy.threshold}, seed {cfg.seed}, {cfg.replications} x {cfg.horizon} arrivals\n")
    out.write(f"  profit rate  analytic {profit:.4f}  simulated {est.profit_rate}  delta {est.profit_rate.mean - profit:+.4f}\n")
    out.write(f"  social rate  analytic {social:.4f}  simulated {est.social_rate}  delta {est.social_rate.mean - social:+.4f}\n")
    out.write("  n  q(n;n0)   occupancy   stderr   join   lateness_paid   l*L_n\n")
    for n in range(policy.threshold + 1):
        d = policy.quote(n)
        lat = s.l * expected_lateness(s, n, d) if n < policy.threshold and d != INF else 0.0
        out.write(
            f"  {n:<2d} {q[n]:8.5f}  {est.occupancy[n]:10.5f} {est.occupancy_stderr[n]:8.5f} "
            f"{est.join_fraction[n]:6.3f}  {_fmt(est.lateness_paid[n], 4) if n < policy.threshold else '':>14}  "
            f"{_fmt(lat, 4) if n < policy.threshold else '':>6}\n"
        )
    return 0


def cmd_min_capacity(args, out: TextIO) -> int:
    sf = load(args.scenario, require_mu=False)
    d_grid = parse_grid(args.d_grid)
    r_values = parse_grid(args.r) if args.r else [sf.scenario.r]
    curves = min_capacity_curves(sf.scenario, d_grid, r_values)
    columns = ["d"] + [f"mu_min_r{r:g}" for r in r_values]
    rows = [[d] + [curves[float(r)][i] for r in r_values] for i, d in enumerate(d_grid)]
    out.write("  ".join(f"{c:>12}" for c in columns) + "\n")
    for row in rows:
        out.write("  ".join(f"{_fmt(v, 4):>12}" for v in row) + "\n")
    if args.csv:
        _write_csv(args.csv, _provenance(sf, "min-capacity"), columns, rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leadquote", description="Lead-time quotation for an observable M/M/1 queue.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="optimal thresholds, quotes and objectives")
    sp.add_argument("scenario")
    sp.add_argument("--problem", help=f"one of {', '.join(PROBLEM_NAMES)}, a comma list, or 'all'")
    sp.add_argument("--csv", help="write per-state rows to this CSV file")
    sp.add_argument("--policy-out", help="write the optimal policy as JSON (single problem)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="solve along one parameter axis")
    sp.add_argument("scenario")
    sp.add_argument("--axis", choices=["p", "l", "r", "mu", "lam"])
    sp.add_argument("--grid", help="start:stop:step or comma list")
    sp.add_argument("--problems", help="comma list of problems (default all)")
    sp.add_argument("--csv")
    sp.add_argument("--with-sim", action="store_true", help="attach simulation confidence intervals")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int, help="worker processes (default from LEADQUOTE_THREADS)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("quote-table", help="per-state quotes of the four optimal policies")
    sp.add_argument("scenario")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_quote_table)

    sp = sub.add_parser("simulate", help="simulate a policy and compare with analytic values")
    sp.add_argument("scenario")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--policy", help="policy JSON written by 'solve --policy-out'")
    src.add_argument("--problem", choices=PROBLEM_NAMES)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--horizon", type=int, help="arrivals per replication")
    sp.add_argument("--warmup", type=float)
    sp.add_argument("--batches", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("min-capacity", help="smallest service rate attracting a customer to an empty system")
    sp.add_argument("scenario", help="scenario file; mu may be omitted")
    sp.add_argument("--d-grid", required=True, help="quotes, start:stop:step or comma list (inf allowed)")
    sp.add_argument("--r", help="risk-aversion values, comma list (default: the file's r)")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_min_capacity)
    return ap


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except InfeasibleServiceError as exc:
        print(f"infeasible service: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ScenarioFileError, InvalidPolicyError, NoCapacityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
