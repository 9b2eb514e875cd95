"""Parameter sweeps, per-state quote tables, risk-aversion curves and minimum capacity."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .optimize import Problem, SolveResult, solve
from .quotes import ThresholdBounds, threshold_bounds
from .sim import SimConfig, SimEstimate, simulate
from .utility import INF, InfeasibleServiceError, Scenario, expected_utility

AXES = ("p", "l", "r", "mu", "lam")
THREADS_ENV = "LEADQUOTE_THREADS"


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    axis: str
    grid: tuple[float, ...]
    problems: tuple[Problem, ...] = tuple(Problem)
    with_simulation: bool = False
    sim_config: SimConfig = field(default_factory=lambda: SimConfig(horizon=50_000, replications=10))

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        grid = tuple(float(x) for x in self.grid)
        if not grid:
            raise ValueError("sweep grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("sweep grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "problems", tuple(Problem(p) for p in self.problems))

    def scenario(self, value: float) -> Scenario:
        return self.base.with_(**{self.axis: value})


@dataclass
class SweepRow:
    value: float
    scenario: Scenario
    bounds: ThresholdBounds | None
    results: dict[Problem, SolveResult]
    sim: dict[Problem, SimEstimate] = field(default_factory=dict)
    note: str = ""

    @property
    def empty_market(self) -> bool:
        return not self.results or all(r.threshold == 0 for r in self.results.values())

    def objective(self, problem: Problem) -> float:
        res = self.results.get(problem)
        return res.objective if res is not None else 0.0

    def threshold(self, problem: Problem) -> int:
        res = self.results.get(problem)
        return res.threshold if res is not None else 0


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]

    def column(self, problem: Problem) -> np.ndarray:
        return np.array([row.objective(problem) for row in self.rows])


def _solve_point(args) -> SweepRow:
    spec, value = args
    s = spec.scenario(value)
    try:
        bounds = threshold_bounds(s)
    except InfeasibleServiceError as exc:
        return SweepRow(value, s, None, {}, note=f"empty market: {exc}")
    results = {p: solve(s, p) for p in spec.problems}
    row = SweepRow(value, s, bounds, results)
    if spec.with_simulation:
        row.sim = {p: simulate(s, res.policy, spec.sim_config) for p, res in results.items()}
    return row


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Solve every grid point; rows keep grid order whatever the worker count."""
    workers = workers or default_workers()
    jobs = [(spec, v) for v in spec.grid]
    if workers == 1 or len(jobs) == 1:
        rows = [_solve_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_solve_point, jobs))
    return SweepResult(spec, rows)


def quote_summary(res: SolveResult | None) -> str:
    """Quotes offered to joining states, ';'-separated (one value for single quotes)."""
    if res is None or res.threshold == 0:
        return ""
    fmt = lambda d: "inf" if d == INF else f"{d:.10g}"  # noqa: E731
    if res.problem.single:
        return fmt(res.policy.quotes)
    return ";".join(fmt(d) for d in res.policy.quotes[:-1])


# -- per-state quote table ------------------------------------------------------

BALK = "-"


@dataclass
class QuoteTable:
    """Rows n = 0..max threshold; cells are quotes, ``BALK`` at the threshold, None beyond."""

    scenario: Scenario
    results: dict[Problem, SolveResult]
    rows: list[dict[Problem, float | str | None]]

    def column(self, problem: Problem) -> list[float | str]:
        return [row[problem] for row in self.rows if row[problem] is not None]


def quote_table(s: Scenario) -> QuoteTable:
    results = {p: solve(s, p) for p in Problem}
    top = max(r.threshold for r in results.values())
    rows = []
    for n in range(top + 1):
        row = {}
        for p, res in results.items():
            if n < res.threshold:
                row[p] = res.policy.quote(n)
            elif n == res.threshold:
                row[p] = BALK
            else:
                row[p] = None
        rows.append(row)
    return QuoteTable(s, results, rows)


# -- risk aversion ----------------------------------------------------------------


@dataclass
class RiskCurves:
    r_grid: np.ndarray
    objectives: dict[Problem, np.ndarray]
    no_compensation: dict[str, np.ndarray]  # "provider" / "social" with l = 0
    no_compensation_cutoff: float  # mu / c
    compensated_cutoff: float  # mu / (c - l)


def _objective_or_zero(s: Scenario, problem: Problem) -> float:
    try:
        return solve(s, problem).objective
    except InfeasibleServiceError:
        return 0.0


def risk_aversion_curves(base: Scenario, r_grid: Sequence[float], problems: Sequence[Problem] = tuple(Problem)) -> RiskCurves:
    """Optimal objectives along ``r``, with and without compensation."""
    r_grid = np.asarray(r_grid, dtype=float)
    objectives = {Problem(p): np.array([_objective_or_zero(base.with_(r=r), Problem(p)) for r in r_grid]) for p in problems}
    plain = base.with_(l=0.0)
    no_comp = {
        "provider": np.array([_objective_or_zero(plain.with_(r=r), Problem.PROVIDER_DYNAMIC) for r in r_grid]),
        "social": np.array([_objective_or_zero(plain.with_(r=r), Problem.SOCIAL_DYNAMIC) for r in r_grid]),
    }
    comp_cut = INF if base.l == base.c else base.mu / (base.c - base.l)
    return RiskCurves(r_grid, objectives, no_comp, base.mu / base.c, comp_cut)


# -- minimum capacity -------------------------------------------------------------


class NoCapacityError(ValueError):
    """No service rate up to the cap makes the empty system attractive."""


def min_capacity(s: Scenario, d: float, r: float | None = None, mu_cap: float = 1e8) -> float:
    """Smallest service rate at which a customer facing an empty system joins.

    ``s.mu`` is ignored.  B_0(d) increases with mu, so the root is bracketed
    by doubling and refined by bisection; the returned rate satisfies
    B_0(d) >= 0 and lies within a relative 1e-13 of the boundary.
    """
    s = s if r is None else s.with_(r=r)

    def utility_at(mu: float) -> float:
        return expected_utility(s.with_(mu=mu), 0, d).value

    # B_0 -> -inf as mu decreases to r(c - l) (or to 0 when r = 0)
    lo = s.r * (s.c - s.l)
    hi = max(1.0, 2 * lo)
    while utility_at(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > mu_cap:
            raise NoCapacityError(f"B_0({d}) < 0 for every mu up to {mu_cap:g}")
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if utility_at(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


def min_capacity_curves(s: Scenario, d_grid: Sequence[float], r_values: Sequence[float]) -> dict[float, np.ndarray]:
    return {float(r): np.array([min_capacity(s, float(d), r=float(r)) for d in d_grid]) for r in r_values}
