"""Independent reference computations for the tests.

Nothing here imports the package's numerical code.  Distributional values
come from mpmath (incomplete gamma, adaptive quadrature at 30 digits),
thresholds from brute-force enumeration, and quotes from a plain grid.
"""

from __future__ import annotations

import math

import mpmath as mp

mp.mp.dps = 30


def erlang_pdf(n: int, rate, x):
    x = mp.mpf(x)
    return rate**n * x ** (n - 1) * mp.e ** (-rate * x) / mp.factorial(n - 1)


def erlang_tail(n: int, rate: float, x: float) -> float:
    """P(Erlang(n, rate) > x) from the regularized upper incomplete gamma."""
    return float(mp.gammainc(n, a=mp.mpf(rate) * x, regularized=True))


def erlang_tail_quad(n: int, rate: float, x: float) -> float:
    rate = mp.mpf(rate)
    return float(mp.quad(lambda t: erlang_pdf(n, rate, t), [x, x + 40 * n / rate, mp.inf]))


def expected_excess(n: int, rate: float, d: float) -> float:
    rate = mp.mpf(rate)
    return float(mp.quad(lambda t: (t - d) * erlang_pdf(n, rate, t), [d, d + 40 * n / rate, mp.inf]))


def signed_sum(n: int, a: float, x: float) -> float:
    z = mp.mpf(a) * x
    return float(mp.e ** (-z) * mp.fsum(z**k / mp.factorial(k) for k in range(n)))


def _net(R, p, c, l, d, x):
    late = l * (x - d) if x > d else 0
    return R - p - c * x + late


def _u(r, w):
    return w if r == 0 else -mp.expm1(-r * w) / r


def utility(R, p, c, l, r, mu, n, d) -> float:
    """E U(w) for a customer who sees n ahead, by 30-digit quadrature."""
    mu = mp.mpf(mu)
    f = lambda x: _u(r, _net(R, p, c, l, d, x)) * erlang_pdf(n + 1, mu, x)  # noqa: E731
    scale = (n + 1) / mu
    if d == math.inf or d == 0:
        return float(mp.quad(f, [0, scale, 40 * scale, mp.inf]))
    return float(mp.quad(f, sorted({0, min(d, scale), d, d + 40 * scale}) + [mp.inf]))


def lateness(mu, n, d) -> float:
    if d == math.inf:
        return 0.0
    return expected_excess(n + 1, mu, d)


def marginal_density(n0: int, lam: float, mu: float, x):
    """Closed-form sojourn density of a joining customer in M/M/1/n0."""
    lam, mu, x = mp.mpf(lam), mp.mpf(mu), mp.mpf(x)
    rho = lam / mu
    pois = mp.fsum(mp.e ** (-lam * x) * (lam * x) ** k / mp.factorial(k) for k in range(n0))
    return (mu - lam) * mp.e ** (-(mu - lam) * x) * pois / (1 - rho**n0)


def marginal_tail_quad(n0: int, lam: float, mu: float, x: float) -> float:
    return float(mp.quad(lambda t: marginal_density(n0, lam, mu, t), [x, x + 40 * n0 / mu, mp.inf]))


def stationary(n0: int, lam: float, mu: float) -> list[float]:
    rho = mp.mpf(lam) / mu
    w = [rho**k for k in range(n0 + 1)]
    tot = mp.fsum(w)
    return [float(x / tot) for x in w]


# -- brute-force optimization oracles ------------------------------------------


def objective(lam: float, mu: float, per_entrant: list[float]) -> float:
    """lam * sum_{n<n0} q(n; n0) g_n with n0 = len(per_entrant)."""
    n0 = len(per_entrant)
    if n0 == 0:
        return 0.0
    q = stationary(n0, lam, mu)
    return lam * math.fsum(q[n] * g for n, g in enumerate(per_entrant))


def argmax_smallest(values: dict[int, float]) -> int:
    best = max(values.values())
    return min(n for n, v in values.items() if v >= best - 1e-12 * max(1.0, abs(best)))


def grid_best(f, lo: float, hi: float, step: float = 1e-3):
    """Maximize ``f`` over lo, lo+step, ..., hi (hi included).  Returns (x, f(x))."""
    best_x, best_v = None, -math.inf
    k = 0
    while True:
        x = lo + k * step
        if x > hi:
            x = hi
        v = f(x)
        if v > best_v:
            best_x, best_v = x, v
        if x >= hi:
            break
        k += 1
    return best_x, best_v
