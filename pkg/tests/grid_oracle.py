"""Brute-force optimization oracles.

Per-state utilities and lateness come from the package's pointwise
evaluators (checked against 30-digit quadrature elsewhere); the search
itself, the stationary weights and the objective arithmetic are done here
independently of the solvers.
"""

from __future__ import annotations

import math

import numpy as np

from leadquote.dist import ErlangSpec, expected_excess
from leadquote.quotes import provider_quote, threshold_bounds
from leadquote.utility import INF, expected_utility, utility_values

import oracles

STEP = 1e-3
# quotes above the last finite grid point are represented by d = inf
TAIL_SPAN = 4.0


def _weights(n0: int, lam: float, mu: float) -> np.ndarray:
    return np.array(oracles.stationary(n0, lam, mu))


def _anchored_grid(lo: float, hi: float, step: float = STEP) -> np.ndarray:
    """lo, lo+step, ..., with hi appended; hi = inf adds a finite tail plus inf."""
    top = lo + TAIL_SPAN if hi == INF else hi
    k = max(int(math.floor((top - lo) / step)), 0)
    g = lo + step * np.arange(k + 1)
    g = np.append(g[g < top], top)
    if hi == INF:
        g = np.append(g, INF)
    return g


def _per_entrant(s, n: int, grid: np.ndarray, social: bool) -> np.ndarray:
    b = utility_values(s, n, grid)
    finite = np.isfinite(grid)
    late = np.zeros(grid.shape)
    late[finite] = expected_excess(ErlangSpec(n + 1, s.mu), grid[finite])
    g = np.where(b >= 0, s.p - s.l * late, 0.0)
    return g + b if social else g


def _epsilon(lo: float, hi: float) -> float:
    return lo + min(lo * 1e-6 + 1e-9, 0.5 * (hi - lo))


def dynamic(s, social: bool, n_cap: int | None = None) -> tuple[int, float]:
    """Best (n0, objective) over thresholds and per-state quote grids."""
    b = threshold_bounds(s)
    top = int(b.upper) if b.upper != INF else b.lower + (n_cap or 60)
    best_state = []
    for n in range(top):
        dp = provider_quote(s, n).value
        grid = _anchored_grid(0.0, dp)
        vals = _per_entrant(s, n, grid, social)
        vals[utility_values(s, n, grid) < 0] = -np.inf
        best_state.append(float(vals.max()))
    values = {}
    for n0 in range(b.lower, top + 1):
        if n0 == 0:
            values[0] = 0.0
            continue
        q = _weights(n0, s.lam, s.mu)
        values[n0] = s.lam * math.fsum(q[n] * best_state[n] for n in range(n0))
    n_star = oracles.argmax_smallest(values)
    return n_star, values[n_star]


def single(s, social: bool, n_cap: int | None = None) -> tuple[int, float]:
    """Best (n0, objective) over a quote grid anchored at every interval end.

    For each threshold n0 the admissible quotes form the interval on which
    states below n0 join and state n0 balks; open lower ends are entered
    at a relative 1e-6.
    """
    b = threshold_bounds(s)
    top = int(b.upper) if b.upper != INF else b.lower + (n_cap or 60)
    dp = {n: provider_quote(s, n).value for n in range(max(b.lower - 1, 0), top + 1)}
    values = {}
    for n0 in range(max(b.lower, 1), top + 1):
        hi = dp[n0 - 1]
        below = dp[n0]
        lo = 0.0 if below < 0 else _epsilon(below, hi)
        if hi < lo:
            continue
        grid = _anchored_grid(lo, hi)
        balks = utility_values(s, n0, grid) < 0
        if not balks.any():
            continue
        q = _weights(n0, s.lam, s.mu)
        total = np.zeros(grid.shape)
        for n in range(n0):
            total += q[n] * _per_entrant(s, n, grid, social)
        total = s.lam * total
        total[~balks] = -np.inf
        values[n0] = float(total.max())
    n_star = oracles.argmax_smallest(values)
    return n_star, values[n_star]


def exhaustive_dynamic_thresholds(s, social: bool, quotes) -> dict[int, float]:
    """Objective for each n0 using the given per-state quotes (brute force)."""
    b = threshold_bounds(s)
    top = int(b.upper)
    per = []
    for n in range(top):
        d = quotes(n)
        bn = expected_utility(s, n, d).value
        late = 0.0 if d == INF else float(expected_excess(ErlangSpec(n + 1, s.mu), d))
        g = s.p - s.l * late
        per.append(g + bn if social else g)
    out = {}
    for n0 in range(b.lower, top + 1):
        q = _weights(n0, s.lam, s.mu) if n0 else [1.0]
        out[n0] = s.lam * math.fsum(q[n] * per[n] for n in range(n0))
    return out
