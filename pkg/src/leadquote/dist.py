"""Erlang tails, expected excess and the sojourn law of an M/M/1/n0 queue.

Every tail here is a finite Poisson sum

    P(Gamma(shape, rate) > x) = sum_{k < shape} exp(-rate*x) (rate*x)^k / k!

evaluated by term recurrence.  Large arguments switch to log space so that
``exp(-rate*x)`` never underflows before the sum is formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

# Above this value of rate*x the leading factor exp(-z) is computed in logs.
_LOG_SWITCH = 600.0
# Cancellation indicator sum|t_k| / |sum t_k| above which the signed sum is refused.
CANCELLATION_LIMIT = 1e8


class DomainError(ValueError):
    """An argument lies outside the domain of a distributional primitive."""


class PrecisionLossError(ArithmeticError):
    """The alternating Poisson sum lost too many digits to be trusted."""

    def __init__(self, message: str, ratio: float):
        super().__init__(message)
        self.ratio = ratio


@dataclass(frozen=True)
class ErlangSpec:
    """Gamma law with integer shape (number of exponential stages)."""

    shape: int
    rate: float

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise DomainError(f"shape must be a positive integer, got {self.shape!r}")
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate!r}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def pdf(self, x):
        return erlang_pdf(self, x)

    def tail(self, x):
        return erlang_tail(self, x)

    def cdf(self, x):
        return erlang_cdf(self, x)

    def expected_excess(self, d):
        return expected_excess(self, d)


def _check_nonneg(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative, got {x!r}")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _poisson_terms_log(shape: int, z: np.ndarray) -> np.ndarray:
    """log of exp(-z) z^k / k! for k < shape, stacked along axis 0."""
    k = np.arange(shape, dtype=float).reshape((-1,) + (1,) * z.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = -z + k * np.log(z) - gammaln(k + 1.0)
    # z == 0: only the k == 0 term survives
    logt = np.where(z == 0, np.where(k == 0, 0.0, -np.inf), logt)
    return logt


def poisson_cdf_sum(shape: int, z):
    """sum_{k < shape} exp(-z) z^k / k! for z >= 0 (vectorized)."""
    z = np.asarray(z, dtype=float)
    small = z <= _LOG_SWITCH
    out = np.empty_like(z)
    if np.any(small):
        zs = z[small]
        term = np.exp(-zs)
        acc = term.copy()
        for k in range(1, shape):
            term = term * zs / k
            acc += term
        out[small] = acc
    if np.any(~small):
        zl = z[~small]
        out[~small] = np.exp(logsumexp(_poisson_terms_log(shape, zl), axis=0))
    return np.minimum(out, 1.0)


def log_poisson_cdf_sum(shape: int, z):
    """log of :func:`poisson_cdf_sum`, finite even when the sum underflows."""
    z = np.asarray(z, dtype=float)
    return np.minimum(logsumexp(_poisson_terms_log(shape, z), axis=0), 0.0)


def erlang_tail(spec: ErlangSpec, x):
    """P(X > x) for X ~ Erlang(shape, rate)."""
    xa = _check_nonneg(x)
    return _ret(poisson_cdf_sum(spec.shape, spec.rate * xa), x)


def log_erlang_tail(spec: ErlangSpec, x):
    xa = _check_nonneg(x)
    return _ret(log_poisson_cdf_sum(spec.shape, spec.rate * xa), x)


def erlang_cdf(spec: ErlangSpec, x):
    """P(X <= x), summed directly from the upper Poisson terms when z < shape.

    Computing ``1 - tail`` loses everything when the tail is close to one,
    which is exactly the regime of the utility closed form near its pole.
    """
    xa = _check_nonneg(x)
    z = spec.rate * xa
    flat = np.atleast_1d(z).astype(float)
    out = np.empty_like(flat)
    upper = flat < spec.shape
    if np.any(~upper):
        out[~upper] = 1.0 - poisson_cdf_sum(spec.shape, flat[~upper])
    if np.any(upper):
        zu = flat[upper]
        n = spec.shape
        with np.errstate(divide="ignore"):
            log_first = -zu + n * np.log(zu) - gammaln(n + 1.0)
        term = np.exp(log_first)
        acc = term.copy()
        k = n
        # ratio z/(k+1) < 1 from the start, so the series converges geometrically
        while True:
            k += 1
            term = term * zu / k
            acc += term
            if np.all(term <= 1e-17 * acc) or k > n + 100000:
                break
        out[upper] = acc
    out = np.clip(out, 0.0, 1.0).reshape(np.shape(z))
    return _ret(out, x)


def erlang_pdf(spec: ErlangSpec, x):
    xa = _check_nonneg(x)
    n = spec.shape - 1
    with np.errstate(divide="ignore"):
        logf = spec.shape * math.log(spec.rate) + n * np.log(xa) - spec.rate * xa - gammaln(spec.shape)
    if n == 0:
        logf = np.where(xa == 0, math.log(spec.rate), logf)
    return _ret(np.exp(logf), x)


def poisson_tail_sum_signed(shape: int, a: float, x: float) -> float:
    """exp(-a x) sum_{k<shape} (a x)^k / k! for any real ``a``.

    For a > 0 this is the Erlang tail.  For a < 0 the inner sum alternates;
    the ratio sum|t_k| / |sum t_k| measures the digits lost and above
    ``CANCELLATION_LIMIT`` a :class:`PrecisionLossError` is raised so the
    caller can integrate numerically instead.
    """
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x!r}")
    if int(shape) != shape or shape < 1:
        raise DomainError(f"shape must be a positive integer, got {shape!r}")
    z = a * x
    if z >= 0:
        return float(poisson_cdf_sum(int(shape), z))
    terms = [1.0]
    for k in range(1, int(shape)):
        terms.append(terms[-1] * z / k)
    total = math.fsum(terms)
    absum = math.fsum(abs(t) for t in terms)
    ratio = math.inf if total == 0 else absum / abs(total)
    if ratio > CANCELLATION_LIMIT:
        raise PrecisionLossError(
            f"alternating Poisson sum (shape={shape}, a*x={z:.6g}) lost precision", ratio
        )
    return math.exp(-z) * total


def expected_excess(spec: ErlangSpec, d):
    """E(X - d)^+ for X ~ Erlang(shape, rate).

    Equal to (shape/rate) P(Erlang(shape+1) > d) - d P(Erlang(shape) > d); the
    equivalent positive form sum_{k<shape} (shape-k) pi_k(rate*d) / rate is
    used because it does not cancel for large d.
    """
    da = _check_nonneg(d, "d")
    z = np.atleast_1d(spec.rate * da)
    n = spec.shape
    out = np.empty_like(z)
    small = z <= _LOG_SWITCH
    if np.any(small):
        zs = z[small]
        term = np.exp(-zs)
        acc = n * term
        for k in range(1, n):
            term = term * zs / k
            acc = acc + (n - k) * term
        out[small] = acc
    if np.any(~small):
        logt = _poisson_terms_log(n, z[~small])
        w = np.log(n - np.arange(n, dtype=float))[:, None]
        out[~small] = np.exp(logsumexp(logt + w, axis=0))
    out = out.reshape(np.shape(da))
    return _ret(out / spec.rate, d)


def stationary_dist(n0: int, lam: float, mu: float) -> np.ndarray:
    """Stationary law q(n; n0) of the M/M/1/n0 queue, n = 0..n0."""
    if int(n0) != n0 or n0 < 0:
        raise DomainError(f"n0 must be a nonnegative integer, got {n0!r}")
    if not (lam > 0 and mu > 0):
        raise DomainError("arrival and service rates must be positive")
    return _geometric_weights(int(n0) + 1, lam / mu)


def _geometric_weights(m: int, rho: float) -> np.ndarray:
    """rho^k / sum_{j<m} rho^j for k < m, without overflow for rho > 1."""
    k = np.arange(m, dtype=float)
    if rho == 1.0:
        return np.full(m, 1.0 / m)
    if rho < 1.0:
        w = rho**k
    else:
        w = (1.0 / rho) ** (m - 1 - k)
    return w / w.sum()


@dataclass(frozen=True)
class FiniteQueueSojourn:
    """Sojourn time of an arriving customer who joins an M/M/1/n0 queue.

    By PASTA the arrival sees state n with probability q(n; n0); conditioned
    on joining (n < n0) the sojourn is Erlang(n+1, service_rate).
    """

    capacity: int
    arrival_rate: float
    service_rate: float

    def __post_init__(self):
        if int(self.capacity) != self.capacity or self.capacity < 1:
            raise DomainError(f"capacity must be an integer >= 1, got {self.capacity!r}")
        if not (self.arrival_rate > 0 and self.service_rate > 0):
            raise DomainError("arrival and service rates must be positive")

    @property
    def rho(self) -> float:
        return self.arrival_rate / self.service_rate

    def joining_weights(self) -> np.ndarray:
        """q(n; n0) restricted to n < n0 and renormalized."""
        return _geometric_weights(int(self.capacity), self.rho)

    def tail(self, x):
        return marginal_sojourn_tail(self, x)

    def pdf(self, x):
        return marginal_sojourn_pdf(self, x)

    def hazard(self, x):
        return marginal_hazard(self, x)


def marginal_sojourn_tail(q: FiniteQueueSojourn, x):
    """sum_{n<n0} w_n P(Erlang(n+1, rate) > x) with renormalized joining weights.

    The Erlang tails of successive shapes are running sums of the same
    Poisson terms, so all n0 of them come from one cumulative sum.
    """
    xa = _check_nonneg(x)
    w = q.joining_weights()
    z = np.atleast_1d(q.service_rate * xa)
    logt = _poisson_terms_log(int(q.capacity), z)
    tails = np.exp(np.logaddexp.accumulate(logt, axis=0))
    acc = np.minimum(w @ tails, 1.0).reshape(np.shape(xa))
    return _ret(acc, x)


def marginal_sojourn_pdf(q: FiniteQueueSojourn, x):
    """(mu-lam) exp(-(mu-lam)x) P(Poisson(lam x) <= n0-1) / (1 - rho^n0)."""
    xa = _check_nonneg(x)
    lam, mu, n0 = q.arrival_rate, q.service_rate, int(q.capacity)
    if lam == mu:
        scale = mu / n0
    else:
        scale = (mu - lam) / (1.0 - q.rho**n0)
    pois = poisson_cdf_sum(n0, lam * xa)
    return _ret(scale * np.exp(-(mu - lam) * xa) * pois, x)


def marginal_hazard(q: FiniteQueueSojourn, x):
    tail = np.asarray(marginal_sojourn_tail(q, x))
    if np.any(tail <= 0):
        raise DomainError(f"sojourn tail underflows at x={x!r}; hazard undefined")
    return _ret(np.asarray(marginal_sojourn_pdf(q, x)) / tail, x)
