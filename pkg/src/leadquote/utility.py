"""Customer expected utility, expected lateness and per-entrant provider profit.

A customer who finds ``n`` others in the system and is quoted lead-time ``d``
faces sojourn X ~ Erlang(n+1, mu) and net benefit

    R - p - c X + l (X - d)^+

valued with CARA utility (1 - exp(-r w)) / r.  ``d = math.inf`` is a valid
quote meaning "no compensation".
"""

from __future__ import annotations

import enum
import math
from fractions import Fraction
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .dist import ErlangSpec, erlang_cdf, expected_excess, log_erlang_tail

INF = math.inf

# Relative distance of mu - r c from zero below which quadrature replaces the closed form.
POLE_GUARD = 1e-6
# Below this risk aversion the closed form cancels (error ~ 1e-16 / r) and the
# second-order expansion E w - r E w^2 / 2 is used instead (error ~ r^2 E|w|^3 / 6).
SMALL_R = 1e-7


class ScenarioError(ValueError):
    """Scenario primitives violate the model assumptions; ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class InfeasibleServiceError(ValueError):
    """mu <= r (c - l): every customer's expected utility is -inf."""


@dataclass(frozen=True)
class Scenario:
    """Market and system primitives.

    ``lam`` and ``mu`` are the arrival and service rates; ``r = 0`` selects
    the risk-neutral customer.
    """

    R: float
    p: float
    c: float
    l: float
    r: float
    lam: float
    mu: float

    def __post_init__(self):
        for name in ("R", "p", "c", "l", "r", "lam", "mu"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or math.isnan(val) or math.isinf(val):
                raise ScenarioError(f"{name} must be a finite number, got {val!r}", name)
        if self.c <= 0:
            raise ScenarioError(f"waiting cost c must be positive, got {self.c}", "c")
        if self.p > self.R:
            raise ScenarioError(f"entrance fee p={self.p} exceeds service value R={self.R}", "p")
        if not 0 <= self.l <= self.c:
            raise ScenarioError(f"compensation rate must satisfy 0 <= l <= c, got l={self.l}, c={self.c}", "l")
        if self.r < 0:
            raise ScenarioError(f"risk aversion r must be nonnegative, got {self.r}", "r")
        if self.lam <= 0:
            raise ScenarioError(f"arrival rate must be positive, got {self.lam}", "lam")
        if self.mu <= 0:
            raise ScenarioError(f"service rate must be positive, got {self.mu}", "mu")

    @property
    def v(self) -> float:
        """Effective rate mu - r(c - l) of the compensated branch."""
        return rate_gap(self.mu, self.r, self.c - self.l)

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def feasible_service(self) -> bool:
        return self.v > 0

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


BASE_SCENARIO = Scenario(R=15.0, p=10.0, c=8.0, l=3.0, r=0.5, lam=10.0, mu=12.0)


class Method(enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature_fallback"


@dataclass(frozen=True)
class UtilityEval:
    value: float
    method: Method

    def __float__(self):
        return self.value


def rate_gap(mu: float, r: float, k: float) -> float:
    """mu - r k rounded once, so the gap keeps full relative accuracy near zero."""
    return float(Fraction(mu) - Fraction(r) * Fraction(k))


def log_rate_ratio(mu: float, r: float, k: float) -> float:
    """log(mu / (mu - r k)), accurate both for tiny r k and close to the pole."""
    x = r * k / mu
    if x < 0.5:
        return -math.log1p(-x)
    return math.log(mu / rate_gap(mu, r, k))


def _excess_moments(mu: float, d: float, n_states: int) -> tuple[np.ndarray, np.ndarray]:
    """E(X_n - d)^+ and E((X_n - d)^+)^2 for n = 0..n_states-1.

    Given k Poisson(mu d) completions by time d (k <= n) the residual is
    Erlang(n+1-k, mu), whose first two moments are j/mu and j(j+1)/mu^2.
    """
    if d == INF:
        return np.zeros(n_states), np.zeros(n_states)
    pmf = np.exp(_log_pmf(mu * d, n_states))
    j = np.arange(1, n_states + 1, dtype=float)
    first = np.convolve(pmf, j)[:n_states] / mu
    second = np.convolve(pmf, j * (j + 1))[:n_states] / mu**2
    return first, second


def _small_r_values(s: Scenario, n_states: int, d: float) -> np.ndarray:
    m = np.arange(1, n_states + 1, dtype=float)
    A, c, l, mu = s.R - s.p, s.c, s.l, s.mu
    L1, L2 = _excess_moments(mu, d, n_states)
    ex, ex2 = m / mu, m * (m + 1) / mu**2
    mean = A - c * ex + l * L1
    cross = A * L1 - c * (L2 + (d * L1 if d != INF else 0.0))
    square = A * A - 2 * A * c * ex + c * c * ex2 + 2 * l * cross + l * l * L2
    return mean - 0.5 * s.r * square


def _closed_form(s: Scenario, n: int, d):
    """B_n(d) for mu - r c > 0; ``d`` may be an array of finite quotes.

    The first piece (mu/a)^{n+1} (1 - K1) is P(Erlang(n+1, a) <= d) scaled,
    and the second (mu/v)^{n+1} K2 is exp(r l d) P(Erlang(n+1, v) > d) scaled.
    Both are assembled in logs and combined through expm1.
    """
    r, a, v = s.r, rate_gap(s.mu, s.r, s.c), s.v
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        log_first = (n + 1) * log_rate_ratio(s.mu, s.r, s.c) + np.log(erlang_cdf(ErlangSpec(n + 1, a), d))
    log_second = (n + 1) * log_rate_ratio(s.mu, s.r, s.c - s.l) + r * s.l * d + log_erlang_tail(ErlangSpec(n + 1, v), d)
    expo = -r * (s.R - s.p) + np.logaddexp(log_first, log_second)
    with np.errstate(over="ignore"):
        return -np.expm1(expo) / r


def _log_erlang_pdf(n: int, mu: float, x: float) -> float:
    if x == 0:
        return math.log(mu) if n == 0 else -INF
    return (n + 1) * math.log(mu) + n * math.log(x) - mu * x - gammaln(n + 1)


def utility_by_quadrature(s: Scenario, n: int, d: float) -> float:
    """B_n(d) from the defining two-piece integral (scipy adaptive quadrature)."""
    r = s.r
    mean = (n + 1) / s.mu
    sd = math.sqrt(n + 1) / s.mu

    def on_time(x):
        return math.exp(r * s.c * x + _log_erlang_pdf(n, s.mu, x))

    def late(x):
        return math.exp(r * s.l * d + r * (s.c - s.l) * x + _log_erlang_pdf(n, s.mu, x))

    first = 0.0
    if d > 0:
        pts = [p for p in (mean, mean + sd) if 0 < p < d] or None
        first = integrate.quad(on_time, 0.0, d, epsabs=0.0, epsrel=1e-13, limit=400, points=pts)[0]
    second = 0.0
    if d < INF:
        # The late-branch integrand decays at rate v; 60 e-folds bounds truncation.
        top = d + max(60.0 / s.v, 10 * sd) + mean
        pts = [p for p in (mean, mean + 3 * sd) if d < p < top] or None
        second = integrate.quad(late, d, top, epsabs=0.0, epsrel=1e-13, limit=400, points=pts)[0]
    total = first + second
    if total <= 0:
        return 1.0 / r
    with np.errstate(over="ignore"):
        return float(-np.expm1(-r * (s.R - s.p) + math.log(total)) / r)


def expected_utility(s: Scenario, n: int, d: float) -> UtilityEval:
    """Expected CARA utility B_n(d) of joining at state ``n`` under quote ``d``."""
    if s.r == 0:
        val = s.R - s.p - s.c * (n + 1) / s.mu + s.l * expected_lateness(s, n, d)
        return UtilityEval(val, Method.CLOSED_FORM)
    if not s.feasible_service:
        return UtilityEval(-INF, Method.CLOSED_FORM)
    if d < 0:
        raise ValueError(f"quote must be nonnegative, got {d!r}")
    if s.r < SMALL_R:
        return UtilityEval(float(_small_r_values(s, n + 1, d)[-1]), Method.CLOSED_FORM)
    a = rate_gap(s.mu, s.r, s.c)
    if d == INF:
        if a <= 0:
            return UtilityEval(-INF, Method.CLOSED_FORM)
        expo = -s.r * (s.R - s.p) + (n + 1) * log_rate_ratio(s.mu, s.r, s.c)
        with np.errstate(over="ignore"):
            return UtilityEval(float(-np.expm1(expo) / s.r), Method.CLOSED_FORM)
    if a > POLE_GUARD * s.mu:
        return UtilityEval(float(_closed_form(s, n, d)), Method.CLOSED_FORM)
    return UtilityEval(utility_by_quadrature(s, n, d), Method.QUADRATURE)


def utility_values(s: Scenario, n: int, d) -> np.ndarray:
    """Vectorized B_n over an array of quotes (``inf`` allowed)."""
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape)
    finite = np.isfinite(d)
    if np.any(~finite):
        out[~finite] = expected_utility(s, n, INF).value
    if not np.any(finite):
        return out
    a = rate_gap(s.mu, s.r, s.c)
    if s.r == 0:
        out[finite] = s.R - s.p - s.c * (n + 1) / s.mu + s.l * expected_excess(ErlangSpec(n + 1, s.mu), d[finite])
    elif not s.feasible_service:
        out[finite] = -INF
    elif s.r < SMALL_R:
        out[finite] = [expected_utility(s, n, float(x)).value for x in d[finite]]
    elif a > POLE_GUARD * s.mu:
        out[finite] = _closed_form(s, n, d[finite])
    else:
        out[finite] = [utility_by_quadrature(s, n, float(x)) for x in d[finite]]
    return out


def _log_pmf(z: float, kmax: int) -> np.ndarray:
    """log Poisson(z) probabilities for k = 0..kmax-1."""
    k = np.arange(kmax, dtype=float)
    if z == 0:
        return np.where(k == 0, 0.0, -INF)
    return -z + k * math.log(z) - gammaln(k + 1)


def state_values(s: Scenario, n_states: int, d: float) -> tuple[np.ndarray, np.ndarray]:
    """(B_n(d), L_n(d)) for n = 0..n_states-1 under one common quote.

    One pass of cumulative Poisson sums replaces ``n_states`` separate
    evaluations; agrees with :func:`expected_utility` and
    :func:`expected_lateness` to round-off.
    """
    if n_states <= 0:
        return np.empty(0), np.empty(0)
    n = np.arange(n_states, dtype=float)
    if d == INF:
        late = np.zeros(n_states)
    else:
        # L_n - L_{n-1} = P(Poisson(mu d) <= n) / mu, a sum of positive terms
        cum = np.exp(np.logaddexp.accumulate(_log_pmf(s.mu * d, n_states)))
        late = np.cumsum(np.minimum(cum, 1.0)) / s.mu
    if s.r == 0:
        return s.R - s.p - s.c * (n + 1) / s.mu + s.l * late, late
    a = rate_gap(s.mu, s.r, s.c)
    if not s.feasible_service:
        return np.full(n_states, -INF), late
    if s.r < SMALL_R:
        return _small_r_values(s, n_states, d), late
    if d == INF:
        if a <= 0:
            return np.full(n_states, -INF), late
        with np.errstate(over="ignore"):
            return -np.expm1(-s.r * (s.R - s.p) + (n + 1) * log_rate_ratio(s.mu, s.r, s.c)) / s.r, late
    if a <= POLE_GUARD * s.mu:
        return np.array([utility_by_quadrature(s, int(k), d) for k in range(n_states)]), late
    # log P(Erlang(n+1, a) <= d): reverse cumulative sum of the Poisson terms above n
    za = a * d
    kmax = n_states + int(2 * za) + 80
    upper = np.logaddexp.accumulate(_log_pmf(za, kmax)[::-1])[::-1]
    log_first = (n + 1) * log_rate_ratio(s.mu, s.r, s.c) + upper[1 : n_states + 1]
    log_tail_v = np.logaddexp.accumulate(_log_pmf(s.v * d, n_states))
    log_second = (n + 1) * log_rate_ratio(s.mu, s.r, s.c - s.l) + s.r * s.l * d + np.minimum(log_tail_v, 0.0)
    expo = -s.r * (s.R - s.p) + np.logaddexp(log_first, log_second)
    with np.errstate(over="ignore"):
        return -np.expm1(expo) / s.r, late


def expected_lateness(s: Scenario, n: int, d: float) -> float:
    """L_n(d) = E(X_n - d)^+, zero for d = inf."""
    if d == INF:
        return 0.0
    return expected_excess(ErlangSpec(n + 1, s.mu), d)


def entrant_profit(s: Scenario, n: int, d: float, utility: float | None = None) -> float:
    """G_n(d): p - l L_n(d) if the customer joins, else 0.

    Not clamped at zero: a generous lateness payout can make it negative.
    """
    b = expected_utility(s, n, d).value if utility is None else utility
    if b < 0:
        return 0.0
    return s.p - s.l * expected_lateness(s, n, d)


def naor_thresholds(s: Scenario) -> tuple[int, float]:
    """Risk-neutral threshold bounds floor(mu(R-p)/c), floor(mu(R-p)/(c-l))."""
    lower = floor_tol(s.mu * (s.R - s.p) / s.c)
    if s.l == s.c:
        return lower, INF
    return lower, floor_tol(s.mu * (s.R - s.p) / (s.c - s.l))


def floor_tol(x: float) -> int:
    """floor() that forgives round-off just below an integer."""
    k = math.floor(x)
    if x - k > 1 - 1e-9 * max(1.0, abs(x)):
        k += 1
    return int(k)
