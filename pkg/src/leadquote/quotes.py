"""Per-state and single lead-time quotes.

* provider: the largest quote a customer at state n still accepts,
  sup{d >= 0 : B_n(d) >= 0};
* social, dynamic: maximizer of G_n + B_n, the root of the decreasing
  marginal-value function ``a(d)`` clipped to the provider quote;
* social, single: maximizer of the stationary-weighted sum over joining
  states, root of ``a_c(d)`` on the quote interval that enforces n0.

Risk-neutral scenarios (r = 0) make both marginal-value functions vanish
identically; there the first-order term in r is used, which is the limit
of the CARA root as r -> 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .dist import (
    ErlangSpec,
    FiniteQueueSojourn,
    log_erlang_tail,
    marginal_sojourn_tail,
)
from .utility import (
    INF,
    SMALL_R,
    InfeasibleServiceError,
    Scenario,
    expected_utility,
    floor_tol,
    log_rate_ratio,
    naor_thresholds,
)

ROOT_TOL = 1e-12
ENFORCE_REL = 1e-6
ENFORCE_ABS = 1e-9
_MAX_DOUBLINGS = 80


class QuoteKind(enum.Enum):
    INTERIOR_ROOT = "interior_root"
    BOUNDARY = "boundary"
    INFINITE = "infinite"
    INFEASIBLE = "infeasible"
    EPSILON_ONLY = "epsilon_only"


@dataclass(frozen=True)
class QuoteSolution:
    value: float
    kind: QuoteKind
    bracket: tuple[float, float] | None = None
    residual: float = 0.0

    @property
    def joins(self) -> bool:
        """Whether some quote makes the customer join."""
        return self.kind is not QuoteKind.INFEASIBLE

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class ThresholdBounds:
    lower: int
    upper: float  # int, or INF when l == c
    joinable: bool

    def __iter__(self):
        return iter((self.lower, self.upper))

    def thresholds(self, cap: int | None = None):
        hi = self.upper if self.upper != INF else cap
        if hi is None:
            raise ValueError("unbounded threshold range needs a cap")
        return range(self.lower, int(hi) + 1)


@dataclass(frozen=True)
class QuoteInterval:
    """Quotes enforcing balking threshold n0: from ``lo`` (open unless
    ``lo_closed``) up to ``hi`` (closed; ``inf`` means no compensation)."""

    lo: float
    hi: float
    lo_closed: bool

    def contains(self, d: float) -> bool:
        above = d >= self.lo if self.lo_closed else d > self.lo
        return above and d <= self.hi


class ThresholdRangeError(ValueError):
    """n0 lies outside [n_lower, n_upper]."""


def threshold_bounds(s: Scenario) -> ThresholdBounds:
    """Universal bounds on the balking threshold of any quotation policy."""
    if s.r == 0:
        lo, hi = naor_thresholds(s)
        return ThresholdBounds(lo, hi, hi > 0)
    if not s.feasible_service:
        raise InfeasibleServiceError(
            f"mu={s.mu} <= r(c-l)={s.r * (s.c - s.l):.6g}: no customer ever joins"
        )
    a = s.mu - s.r * s.c
    lower = floor_tol((s.R - s.p) * _rate_quotient(s.r, s.mu, s.c)) if a > 0 else 0
    upper = INF if s.l == s.c else floor_tol((s.R - s.p) * _rate_quotient(s.r, s.mu, s.c - s.l))
    return ThresholdBounds(lower, upper, upper > 0)


def _rate_quotient(r: float, mu: float, k: float) -> float:
    """r / log(mu / (mu - r k)); a series for small r k / mu avoids 0/0 underflow."""
    x = r * (k / mu)
    if x < 1e-8:
        return (mu / k) / (1 + x / 2 + x * x / 3)
    return r / log_rate_ratio(mu, r, k)


def bisect_decreasing(f: Callable[[float], float], lo: float, hi: float, tol: float = ROOT_TOL):
    """Root of a decreasing ``f`` with f(lo) >= 0 > f(hi).

    Returns the left end of the final bracket, where f >= 0 (a customer at
    exact indifference joins).
    """
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm >= 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return lo, flo


def _expand_bracket(f: Callable[[float], float], start: float) -> float:
    hi = max(1.0, 2 * start)
    for _ in range(_MAX_DOUBLINGS):
        if f(hi) < 0:
            return hi
        hi *= 2
    raise RuntimeError("no sign change found while expanding the quote bracket")


def _root(f, lo, hi, kind=QuoteKind.INTERIOR_ROOT) -> QuoteSolution:
    if hi == INF:
        hi = _expand_bracket(f, lo)
    root, froot = bisect_decreasing(f, lo, hi)
    return QuoteSolution(root, kind, (lo, hi), abs(froot))


def _utility(s: Scenario, n: int) -> Callable[[float], float]:
    return lambda d: expected_utility(s, n, d).value


def provider_quote(s: Scenario, n: int) -> QuoteSolution:
    """Largest quote a customer who sees ``n`` still accepts.

    ``INFINITE`` when even no compensation is accepted, ``INFEASIBLE``
    (value -1) when the customer balks even at d = 0.
    """
    if s.r > 0 and not s.feasible_service:
        raise InfeasibleServiceError(f"mu={s.mu} <= r(c-l)")
    B = _utility(s, n)
    if B(0.0) < 0:
        return QuoteSolution(-1.0, QuoteKind.INFEASIBLE)
    if B(INF) >= 0:
        return QuoteSolution(INF, QuoteKind.INFINITE)
    return _root(B, 0.0, INF)


def enforcement_quote(s: Scenario, n0: int) -> float:
    """A published quote that makes the customer at ``n0`` balk."""
    dp = provider_quote(s, n0)
    if dp.kind is QuoteKind.INFEASIBLE:
        return 0.0
    if dp.kind is QuoteKind.INFINITE:
        raise ThresholdRangeError(f"no quote makes state {n0} balk")
    return dp.value * (1 + ENFORCE_REL) + ENFORCE_ABS


# -- social, dynamic ---------------------------------------------------------


def _log_tail(n: int, rate: float, d: float) -> float:
    return float(log_erlang_tail(ErlangSpec(n + 1, rate), d))


def marginal_value(s: Scenario, n: int, d: float) -> float:
    """a(d): its sign is the sign of d/dd (G_n + B_n)(d).

    For r = 0 this returns the first-order coefficient in r instead, since
    a(d) itself is identically zero there; the same coefficient stands in
    for tiny r, where a(d) ~ r a1(d) is below round-off.
    """
    if d == INF:
        if s.r < SMALL_R:
            return -INF
        return -math.exp((n + 1) * log_rate_ratio(s.mu, s.r, s.c - s.l) - s.r * (s.R - s.p))
    if s.r < SMALL_R:
        return _marginal_value_rn(s, n, d)
    ratio = _log_tail(n, s.mu, d) - _log_tail(n, s.v, d) - s.r * s.l * d
    return math.exp(ratio) - math.exp((n + 1) * log_rate_ratio(s.mu, s.r, s.c - s.l) - s.r * (s.R - s.p))


def _marginal_value_rn(s: Scenario, n: int, d: float) -> float:
    # (R-p) - (n+1)(c-l)/mu - l d - (c-l) d pi_n(mu d) / P(Erlang(n+1,mu) > d)
    mu = s.mu
    if d == 0:
        hz = 0.0
    else:
        log_pi = -mu * d + n * math.log(mu * d) - math.lgamma(n + 1)
        hz = d * math.exp(log_pi - _log_tail(n, mu, d))
    return (s.R - s.p) - (n + 1) * (s.c - s.l) / mu - s.l * d - (s.c - s.l) * hz


def social_dynamic_quote(s: Scenario, n: int, provider: QuoteSolution | None = None) -> QuoteSolution:
    """Quote maximizing G_n + B_n subject to the customer joining at ``n``."""
    dp = provider if provider is not None else provider_quote(s, n)
    if dp.kind is QuoteKind.INFEASIBLE:
        raise ThresholdRangeError(f"state {n} cannot be made to join")
    a = lambda d: marginal_value(s, n, d)  # noqa: E731
    hi = dp.value
    if hi < INF and a(hi) >= 0:
        return QuoteSolution(hi, QuoteKind.BOUNDARY, (0.0, hi), 0.0)
    if a(0.0) < 0:
        return QuoteSolution(0.0, QuoteKind.BOUNDARY, (0.0, hi), 0.0)
    return _root(a, 0.0, hi)


# -- single quotes -------------------------------------------------------------


ProviderLookup = Callable[[int], QuoteSolution]


def single_quote_interval(
    s: Scenario, n0: int, bounds: ThresholdBounds | None = None, provider: ProviderLookup | None = None
) -> QuoteInterval:
    """Quotes d with B_{n0-1}(d) >= 0 > B_{n0}(d).

    ``provider`` may supply cached per-state provider quotes.
    """
    bounds = bounds or threshold_bounds(s)
    if not bounds.lower <= n0 <= bounds.upper or n0 < 1:
        raise ThresholdRangeError(f"n0={n0} outside [{bounds.lower}, {bounds.upper}]")
    lookup = provider or (lambda n: provider_quote(s, n))
    below, top = lookup(n0), lookup(n0 - 1)
    if top.kind is QuoteKind.INFEASIBLE:
        raise ThresholdRangeError(f"state {n0 - 1} cannot be made to join")
    if below.kind is QuoteKind.INFINITE:
        raise ThresholdRangeError(f"state {n0} cannot be made to balk")
    if below.kind is QuoteKind.INFEASIBLE:
        return QuoteInterval(0.0, top.value, True)
    return QuoteInterval(below.value, top.value, False)


def epsilon_quote(iv: QuoteInterval) -> float:
    """Canonical published quote just inside an open lower end."""
    if iv.lo_closed:
        return iv.lo
    step = iv.lo * ENFORCE_REL + ENFORCE_ABS
    return iv.lo + min(step, 0.5 * (iv.hi - iv.lo))


def provider_single_quote(
    s: Scenario, n0: int, bounds: ThresholdBounds | None = None, provider: ProviderLookup | None = None
) -> QuoteSolution:
    """Profit-maximizing single quote enforcing ``n0``: the top of the interval."""
    iv = single_quote_interval(s, n0, bounds, provider)
    kind = QuoteKind.INFINITE if iv.hi == INF else QuoteKind.BOUNDARY
    return QuoteSolution(iv.hi, kind, (iv.lo, iv.hi), 0.0)


def single_beta(s: Scenario, n0: int) -> float:
    """Scale linking the v-weighted joining mixture to the mu-weighted one.

    Equals (mu/v) sum_{k<n0} (lam/v)^k / sum_{k<n0} (lam/mu)^k, i.e.
    ((mu-lam)/(1-rho^n0)) ((1-(lam/v)^n0)/(v-lam)) without the removable
    singularities at lam = mu and lam = v.
    """
    k = np.arange(n0, dtype=float)
    sig, rho = s.lam / s.v, s.lam / s.mu
    # ratio of geometric sums in logs so large n0 with rho > 1 does not overflow
    num = logsumexp(k * math.log(sig))
    den = logsumexp(k * math.log(rho))
    return math.exp(log_rate_ratio(s.mu, s.r, s.c - s.l) + num - den)


def single_marginal_value(s: Scenario, n0: int, d: float) -> float:
    """a_c(d): its sign is the sign of dS_c/dd at threshold ``n0``.

    Uses the sojourn tails of joining customers, q(n; n0) restricted to
    n < n0 and renormalized, at service rates mu and v.  For r = 0 (and
    tiny r) the first-order coefficient in r is returned.
    """
    if s.r < SMALL_R:
        return _single_marginal_value_rn(s, n0, d)
    if d == INF:
        return -single_beta(s, n0) * math.exp(-s.r * (s.R - s.p))
    tail_mu = marginal_sojourn_tail(FiniteQueueSojourn(n0, s.lam, s.mu), d)
    tail_v = marginal_sojourn_tail(FiniteQueueSojourn(n0, s.lam, s.v), d)
    beta = single_beta(s, n0)
    if tail_mu == 0.0 or tail_v == 0.0:
        return _single_marginal_value_logs(s, n0, d, beta)
    return tail_mu / tail_v * math.exp(-s.r * s.l * d) - beta * math.exp(-s.r * (s.R - s.p))


def _mixture_log_tail(n0: int, lam: float, rate: float, d: float) -> float:
    w = FiniteQueueSojourn(n0, lam, rate).joining_weights()
    logs = [math.log(wn) + _log_tail(n, rate, d) for n, wn in enumerate(w) if wn > 0]
    return float(logsumexp(logs))


def _single_marginal_value_logs(s: Scenario, n0: int, d: float, beta: float) -> float:
    ratio = _mixture_log_tail(n0, s.lam, s.mu, d) - _mixture_log_tail(n0, s.lam, s.v, d) - s.r * s.l * d
    return math.exp(ratio) - beta * math.exp(-s.r * (s.R - s.p))


def _single_marginal_value_rn(s: Scenario, n0: int, d: float) -> float:
    mu = s.mu
    if d == INF:
        return -INF
    w = FiniteQueueSojourn(n0, s.lam, mu).joining_weights()
    n = np.arange(n0)
    nbar = float(np.dot(w, n))
    tails = np.array([math.exp(_log_tail(k, mu, d)) for k in range(n0)])
    if d == 0:
        pis = np.zeros(n0)
        pis[0] = 1.0 if n0 else 0.0
    else:
        pis = np.exp(-mu * d + n * math.log(mu * d) - np.array([math.lgamma(k + 1) for k in range(n0)]))
    mix_tail = float(np.dot(w, tails))
    dlog_tail_v = (s.c - s.l) * (float(np.dot(w, (n - nbar) * tails)) / mu + d * float(np.dot(w, pis))) / mix_tail
    return -dlog_tail_v - s.l * d - (s.c - s.l) * (1 + nbar) / mu + (s.R - s.p)


def social_single_quote(
    s: Scenario, n0: int, bounds: ThresholdBounds | None = None, provider: ProviderLookup | None = None
) -> QuoteSolution:
    """Socially optimal single quote enforcing ``n0``.

    ``EPSILON_ONLY`` marks an open lower end at which the supremum sits and
    is never attained; ``value`` then holds that unattained end point and
    :func:`epsilon_quote` gives a publishable quote approaching it.
    """
    iv = single_quote_interval(s, n0, bounds, provider)
    ac = lambda d: single_marginal_value(s, n0, d)  # noqa: E731
    if iv.hi < INF and ac(iv.hi) >= 0:
        return QuoteSolution(iv.hi, QuoteKind.BOUNDARY, (iv.lo, iv.hi), 0.0)
    a_lo = ac(iv.lo)
    if a_lo > 0:
        return _root(ac, iv.lo, iv.hi)
    if iv.lo_closed:
        return QuoteSolution(iv.lo, QuoteKind.BOUNDARY, (iv.lo, iv.hi), 0.0)
    return QuoteSolution(iv.lo, QuoteKind.EPSILON_ONLY, (iv.lo, iv.hi), abs(a_lo))
