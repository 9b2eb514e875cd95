"""Two-stage solvers: pick a balking threshold n0, then the quotes.

Objective rates for a policy with threshold n0 and quotes d_n:

    P = lam * sum_{n<n0} q(n; n0) G_n(d_n)
    S = lam * sum_{n<n0} q(n; n0) (G_n(d_n) + B_n(d_n))

Dynamic problems use a first-sign-change rule on a marginal criterion
(a threshold is raised while one more joining state still pays off).
Single-quote problems search the threshold range exhaustively.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dist import stationary_dist
from .quotes import (
    QuoteKind,
    QuoteSolution,
    ThresholdBounds,
    enforcement_quote,
    epsilon_quote,
    single_quote_interval,
    provider_quote,
    provider_single_quote,
    social_dynamic_quote,
    social_single_quote,
    threshold_bounds,
)
from .utility import INF, Scenario, entrant_profit, expected_utility, state_values

# Cap on thresholds scanned beyond the lower bound when the upper bound is infinite.
UNBOUNDED_SPAN = 200
TAIL_STOP_INCREMENT = 1e-12
TAIL_STOP_RUN = 10
# objectives this close (relative) count as tied; the shorter queue wins
TIE_REL = 1e-12


class Problem(enum.Enum):
    PROVIDER_DYNAMIC = "provider-dynamic"
    PROVIDER_SINGLE = "provider-single"
    SOCIAL_DYNAMIC = "social-dynamic"
    SOCIAL_SINGLE = "social-single"

    @property
    def social(self) -> bool:
        return self in (Problem.SOCIAL_DYNAMIC, Problem.SOCIAL_SINGLE)

    @property
    def single(self) -> bool:
        return self in (Problem.PROVIDER_SINGLE, Problem.SOCIAL_SINGLE)

    @property
    def label(self) -> str:
        """Short tag used in reports, e.g. ``n_Pc`` / ``P*_c``."""
        return {
            Problem.PROVIDER_DYNAMIC: "P",
            Problem.PROVIDER_SINGLE: "Pc",
            Problem.SOCIAL_DYNAMIC: "S",
            Problem.SOCIAL_SINGLE: "Sc",
        }[self]


class Regime(enum.Enum):
    DYNAMIC = "dynamic"
    SINGLE = "single"


class InvalidPolicyError(ValueError):
    """Quotes do not induce the policy's balking threshold."""


@dataclass(frozen=True)
class QuotationPolicy:
    """Balking threshold plus quotes.

    Dynamic policies hold ``threshold + 1`` quotes (the last one makes the
    customer at the threshold balk); single policies hold one float.
    """

    threshold: int
    quotes: tuple[float, ...] | float
    regime: Regime

    def __post_init__(self):
        if self.threshold < 0:
            raise InvalidPolicyError(f"threshold must be >= 0, got {self.threshold}")
        if self.regime is Regime.DYNAMIC:
            object.__setattr__(self, "quotes", tuple(float(d) for d in self.quotes))
            if len(self.quotes) != self.threshold + 1:
                raise InvalidPolicyError(
                    f"dynamic policy with threshold {self.threshold} needs {self.threshold + 1} quotes"
                )
        else:
            object.__setattr__(self, "quotes", float(self.quotes))
        if any(d < 0 or math.isnan(d) for d in self.quote_vector()):
            raise InvalidPolicyError("quotes must be nonnegative")

    def quote(self, n: int) -> float:
        if self.regime is Regime.SINGLE:
            return self.quotes
        return self.quotes[min(n, self.threshold)]

    def quote_vector(self) -> list[float]:
        return [self.quote(n) for n in range(self.threshold + 1)]

    def to_dict(self) -> dict:
        enc = lambda d: "inf" if d == INF else d  # noqa: E731
        quotes = enc(self.quotes) if self.regime is Regime.SINGLE else [enc(d) for d in self.quotes]
        return {"threshold": self.threshold, "regime": self.regime.value, "quotes": quotes}

    @classmethod
    def from_dict(cls, data: dict) -> "QuotationPolicy":
        try:
            regime = Regime(data["regime"])
            raw = data["quotes"]
            quotes = float(raw) if regime is Regime.SINGLE else tuple(float(d) for d in raw)
            return cls(int(data["threshold"]), quotes, regime)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPolicyError(f"malformed policy record: {exc}") from exc


def verify_policy(s: Scenario, policy: QuotationPolicy) -> None:
    """Raise unless customers join exactly at states below the threshold."""
    n0 = policy.threshold
    for n in range(n0):
        b = expected_utility(s, n, policy.quote(n)).value
        if not b >= 0:
            raise InvalidPolicyError(f"state {n} balks under quote {policy.quote(n)!r} (B={b:.3g})")
    b = expected_utility(s, n0, policy.quote(n0)).value
    if not b < 0:
        raise InvalidPolicyError(f"state {n0} joins under quote {policy.quote(n0)!r} (B={b:.3g})")


@dataclass(frozen=True)
class StateDiagnostic:
    n: int
    quote: float
    utility: float
    profit: float
    weight: float


@dataclass(frozen=True)
class TraceEntry:
    n0: int
    objective: float
    criterion: float | None = None  # marginal test value for dynamic searches
    note: str = ""


@dataclass
class SolveResult:
    problem: Problem
    policy: QuotationPolicy
    objective: float
    per_state: list[StateDiagnostic]
    bounds: ThresholdBounds | None
    search_trace: list[TraceEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def threshold(self) -> int:
        return self.policy.threshold

    def summary(self) -> str:
        tag = self.problem.label
        star = "P*" if tag.startswith("P") else "S*"
        if tag.endswith("c"):
            star += "_c"
        return f"n_{tag}={self.threshold}, {star}={truncate(self.objective)}"


def truncate(x: float, digits: int = 2) -> str:
    """Fixed-point text cut (not rounded) to ``digits`` decimals, as in published tables."""
    if not math.isfinite(x):
        return "inf" if x > 0 else str(x)
    scale = 10**digits
    cut = math.floor(abs(x) * scale + 1e-9) / scale
    return f"{'-' if x < 0 and cut > 0 else ''}{cut:.{digits}f}"


# -- objective evaluation -----------------------------------------------------


def _rate(s: Scenario, policy: QuotationPolicy, per_entrant: Callable[[int, float, float], float]) -> float:
    n0 = policy.threshold
    if n0 == 0:
        return 0.0
    q = stationary_dist(n0, s.lam, s.mu)
    total = 0.0
    for n in range(n0):
        d = policy.quote(n)
        b = expected_utility(s, n, d).value
        total += q[n] * per_entrant(n, d, b)
    return s.lam * total


def eval_profit_rate(s: Scenario, policy: QuotationPolicy, check: bool = True) -> float:
    if check:
        verify_policy(s, policy)
    return _rate(s, policy, lambda n, d, b: entrant_profit(s, n, d, b))


def eval_social_rate(s: Scenario, policy: QuotationPolicy, check: bool = True) -> float:
    if check:
        verify_policy(s, policy)
    return _rate(s, policy, lambda n, d, b: entrant_profit(s, n, d, b) + b)


def diagnostics(s: Scenario, policy: QuotationPolicy) -> list[StateDiagnostic]:
    n0 = policy.threshold
    q = stationary_dist(n0, s.lam, s.mu) if n0 > 0 else np.ones(1)
    out = []
    for n in range(n0 + 1):
        d = policy.quote(n)
        b = expected_utility(s, n, d).value
        out.append(StateDiagnostic(n, d, b, entrant_profit(s, n, d, b), float(q[n])))
    return out


def threshold_value(s: Scenario, n0: int, values: Sequence[float]) -> float:
    """lam * sum_{n<n0} q(n; n0) values[n]."""
    if n0 == 0:
        return 0.0
    q = stationary_dist(n0, s.lam, s.mu)
    return s.lam * float(np.dot(q[:n0], np.asarray(values[:n0], dtype=float)))


def marginal_criterion(rho: float, values: Sequence[float], n0: int) -> float:
    """v_{n0} sum_{n<=n0} rho^n - rho sum_{n<n0} rho^n v_n.

    Its sign is the sign of the objective change from n0 to n0 + 1.
    Scaled by rho^{-n0} so long queues with rho > 1 stay finite.
    """
    k = np.arange(n0 + 1, dtype=float)
    w = np.exp((k - n0) * math.log(rho))
    return values[n0] * float(w.sum()) - rho * float(np.dot(w[:n0], values[:n0]))


# -- solvers ----------------------------------------------------------------


def _tied(value: float, best: float) -> bool:
    return value >= best - TIE_REL * max(1.0, abs(best))


def _empty_result(s: Scenario, problem: Problem, bounds: ThresholdBounds | None, note: str) -> SolveResult:
    regime = Regime.SINGLE if problem.single else Regime.DYNAMIC
    quotes = 0.0 if problem.single else (0.0,)
    policy = QuotationPolicy(0, quotes, regime)
    return SolveResult(problem, policy, 0.0, diagnostics(s, policy), bounds, [], [note])


def _upper_scan(bounds: ThresholdBounds, span: int | None = None) -> int:
    if bounds.upper != INF:
        return int(bounds.upper)
    return bounds.lower + (UNBOUNDED_SPAN if span is None else span)


class _StateCache:
    """Lazily computed per-state provider and social quotes."""

    def __init__(self, s: Scenario):
        self.s = s
        self._provider: dict[int, QuoteSolution] = {}
        self._social: dict[int, QuoteSolution] = {}

    def provider(self, n: int) -> QuoteSolution:
        if n not in self._provider:
            self._provider[n] = provider_quote(self.s, n)
        return self._provider[n]

    def social(self, n: int) -> QuoteSolution:
        if n not in self._social:
            self._social[n] = social_dynamic_quote(self.s, n, self.provider(n))
        return self._social[n]

    def per_entrant(self, n: int, social: bool) -> float:
        d = (self.social(n) if social else self.provider(n)).value
        b = expected_utility(self.s, n, d).value
        g = entrant_profit(self.s, n, d, b)
        return g + b if social else g


def _solve_dynamic(s: Scenario, problem: Problem, span: int | None = None) -> SolveResult:
    bounds = threshold_bounds(s)
    if not bounds.joinable:
        return _empty_result(s, problem, bounds, "empty market: no state can be made to join")
    social = problem.social
    cache = _StateCache(s)
    # the marginal rule needs no cap in theory; a generous one guards against stalls
    hi = bounds.upper if bounds.upper != INF else bounds.lower + 100 * (span or UNBOUNDED_SPAN)
    values: list[float] = []
    trace: list[TraceEntry] = []
    first_drop = None
    for n0 in range(int(hi)):
        values.append(cache.per_entrant(n0, social))
        crit = marginal_criterion(s.rho, values, n0)
        if n0 >= bounds.lower:
            trace.append(TraceEntry(n0, threshold_value(s, n0, values), crit))
        if crit < 0:
            first_drop = n0
            break
    if first_drop is None and bounds.upper == INF:
        raise RuntimeError("marginal criterion never turned negative within the scan cap")
    n_tilde = first_drop if first_drop is not None else int(hi)
    n_star = max(bounds.lower, min(n_tilde, int(hi)))
    while len(values) < n_star:
        values.append(cache.per_entrant(len(values), social))
    notes = []
    best = threshold_value(s, n_star, values)
    tied = [t.n0 for t in trace if t.n0 < n_star and _tied(t.objective, best)]
    if tied:
        notes.append(f"n0={tied[0]} chosen over n0={n_star}: objectives agree to round-off")
        n_star = tied[0]
    quotes = [(cache.social(n) if social else cache.provider(n)).value for n in range(n_star)]
    quotes.append(enforcement_quote(s, n_star))
    policy = QuotationPolicy(n_star, tuple(quotes), Regime.DYNAMIC)
    objective = threshold_value(s, n_star, values)
    notes += _negative_profit_notes(s, policy)
    return SolveResult(problem, policy, objective, diagnostics(s, policy), bounds, trace, notes)


def _negative_profit_notes(s: Scenario, policy: QuotationPolicy) -> list[str]:
    notes = []
    for n in range(policy.threshold):
        g = entrant_profit(s, n, policy.quote(n))
        if g < 0:
            notes.append(f"state {n}: negative per-entrant profit {g:.6g}")
    return notes


def solve_provider_dynamic(s: Scenario, span: int | None = None) -> SolveResult:
    """Profit-maximizing state-dependent quotes."""
    return _solve_dynamic(s, Problem.PROVIDER_DYNAMIC, span)


def solve_social_dynamic(s: Scenario, span: int | None = None) -> SolveResult:
    """Total-benefit-maximizing state-dependent quotes."""
    return _solve_dynamic(s, Problem.SOCIAL_DYNAMIC, span)


def _single_candidate(s: Scenario, n0: int, bounds: ThresholdBounds, social: bool, cache: _StateCache):
    """(quote solution, published quote, objective) for threshold ``n0``.

    An epsilon-only social quote is valued at :func:`epsilon_quote`, which
    approaches the unattained supremum to within a relative 1e-6 in d.
    The objective is None when no quote in the interval enforces ``n0``
    numerically.
    """
    if social:
        sol = social_single_quote(s, n0, bounds, cache.provider)
    else:
        sol = provider_single_quote(s, n0, bounds, cache.provider)
    d = sol.value
    if sol.kind is QuoteKind.EPSILON_ONLY:
        d = epsilon_quote(single_quote_interval(s, n0, bounds, cache.provider))
        if not expected_utility(s, n0, d).value < 0:
            return sol, d, None
    return sol, d, threshold_value(s, n0, _single_values(s, n0, d, social))


def _single_values(s: Scenario, n0: int, d: float, social: bool) -> np.ndarray:
    """Per-entrant objective terms for states 0..n0-1, all joining under ``d``."""
    b, late = state_values(s, n0, d)
    g = s.p - s.l * late
    return g + b if social else g


def _solve_single(s: Scenario, problem: Problem, span: int | None = None) -> SolveResult:
    bounds = threshold_bounds(s)
    if not bounds.joinable:
        return _empty_result(s, problem, bounds, "empty market: no state can be made to join")
    social = problem.social
    lo, hi = max(bounds.lower, 1), _upper_scan(bounds, span)
    cache = _StateCache(s)
    trace: list[TraceEntry] = []
    candidates = []
    small_run, prev = 0, None
    for n0 in range(lo, hi + 1):
        sol, d, obj = _single_candidate(s, n0, bounds, social, cache)
        if obj is None:
            trace.append(TraceEntry(n0, math.nan, None, "interval collapsed; not enforceable"))
            continue
        trace.append(TraceEntry(n0, obj, None, sol.kind.value))
        candidates.append((n0, sol, d, obj))
        if bounds.upper == INF and prev is not None:
            small_run = small_run + 1 if abs(obj - prev) < TAIL_STOP_INCREMENT else 0
            if small_run >= TAIL_STOP_RUN:
                break
        prev = obj
    notes = []
    if bounds.upper == INF:
        notes.append(f"threshold range unbounded; scan stopped at n0={trace[-1].n0}")
    if not candidates:
        raise RuntimeError("no admissible single-quote threshold")
    top = max(c[3] for c in candidates)
    n0, sol, d, obj = next(c for c in candidates if _tied(c[3], top))
    policy = QuotationPolicy(n0, d, Regime.SINGLE)
    if d == INF and s.l > 0:
        notes.append("no-compensation quote: lateness is never paid, entrant profit equals p")
    if sol.kind is QuoteKind.EPSILON_ONLY:
        notes.append(f"epsilon-optimal: supremum approached as the quote decreases to {sol.value:.10g}")
    notes += _negative_profit_notes(s, policy)
    return SolveResult(problem, policy, obj, diagnostics(s, policy), bounds, trace, notes)


def solve_provider_single(s: Scenario, span: int | None = None) -> SolveResult:
    """Profit-maximizing single quote, threshold by exhaustive search."""
    return _solve_single(s, Problem.PROVIDER_SINGLE, span)


def solve_social_single(s: Scenario, span: int | None = None) -> SolveResult:
    """Total-benefit-maximizing single quote.

    Thresholds whose best quote sits at an open interval end compete with
    the value approached there, using :func:`epsilon_quote` as the
    published quote.
    """
    return _solve_single(s, Problem.SOCIAL_SINGLE, span)


SOLVERS = {
    Problem.PROVIDER_DYNAMIC: solve_provider_dynamic,
    Problem.PROVIDER_SINGLE: solve_provider_single,
    Problem.SOCIAL_DYNAMIC: solve_social_dynamic,
    Problem.SOCIAL_SINGLE: solve_social_single,
}


def solve(s: Scenario, problem: Problem | str, span: int | None = None) -> SolveResult:
    """Dispatch to one of the four solvers.

    ``span`` caps the threshold scan above the lower bound when the upper
    bound is infinite (full compensation).
    """
    return SOLVERS[Problem(problem)](s, span)


def risk_neutral_solve(s: Scenario, problem: Problem | str) -> SolveResult:
    """Solve a risk-neutral scenario (r = 0)."""
    if s.r != 0:
        raise ValueError(f"risk-neutral solve needs r = 0, got r={s.r}")
    return solve(s, problem)


def exhaustive_dynamic(s: Scenario, problem: Problem, span: int | None = None) -> list[tuple[int, float]]:
    """(n0, objective) over the whole threshold range with per-state optimal quotes.

    Brute-force counterpart of the marginal rule in :func:`solve`.
    """
    bounds = threshold_bounds(s)
    cache = _StateCache(s)
    out = []
    for n0 in range(bounds.lower, _upper_scan(bounds, span) + 1):
        vals = [cache.per_entrant(n, problem.social) for n in range(n0)]
        out.append((n0, threshold_value(s, n0, vals)))
    return out
