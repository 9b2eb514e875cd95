"""Discrete-event simulation of the observable M/M/1 queue under a quotation policy.

The simulator shares no code with the analytic modules beyond the policy
and scenario containers: customers are generated one by one, see the
current queue length, join when it is below the threshold, and are served
FCFS.  Each joining customer's realized net benefit

    R - p - c X + l (X - d_n)^+

is recorded along with the lateness paid.  Independent replications use
separate streams spawned from one seed, so results are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .optimize import QuotationPolicy, verify_policy
from .utility import INF, InfeasibleServiceError, Scenario

try:  # optional JIT; the kernel is plain Python either way
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


@dataclass(frozen=True)
class SimConfig:
    """``horizon`` counts arrivals per replication; ``warmup`` is the discarded fraction."""

    horizon: int = 200_000
    warmup: float = 0.1
    replications: int = 20
    seed: int = 0
    batch_count: int = 20
    confidence: float = 0.95

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 <= self.warmup < 1:
            raise ValueError("warmup must lie in [0, 1)")
        if self.batch_count < 2:
            raise ValueError("batch_count must be >= 2")
        if self.horizon - int(self.warmup * self.horizon) < self.batch_count:
            raise ValueError("horizon too short for the requested batches")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class Interval:
    mean: float
    half_width: float
    stderr: float

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def covers(self, x: float) -> bool:
        return self.low <= x <= self.high

    def __str__(self):
        return f"{self.mean:.4f} +/- {self.half_width:.4f}"


@dataclass
class SimEstimate:
    """Monte-Carlo estimates; per-state arrays are indexed by the state seen (0..n0)."""

    profit_rate: Interval
    social_rate: Interval
    occupancy: np.ndarray
    occupancy_stderr: np.ndarray
    join_fraction: np.ndarray
    lateness_paid: np.ndarray  # mean l (X - d_n)^+ per entrant
    lateness_stderr: np.ndarray
    utility: np.ndarray  # mean realized U per entrant
    utility_stderr: np.ndarray
    arrivals: np.ndarray
    replications: int

    def occupancy_within(self, q: np.ndarray, k: float = 3.0) -> np.ndarray:
        """Per-state check |occupancy - q| <= k stderr."""
        return np.abs(self.occupancy - q) <= k * self.occupancy_stderr + 1e-12


def _replication(inter, service, quotes, n0, p, c, l, r, R, warm, batch_count):
    """One replication.  Returns per-state and per-batch accumulators."""
    m = n0 + 1
    occ = np.zeros(m)
    arrivals = np.zeros(m)
    joins = np.zeros(m)
    late_sum = np.zeros(m)
    late_sq = np.zeros(m)
    util_sum = np.zeros(m)
    util_sq = np.zeros(m)
    b_profit = np.zeros(batch_count)
    b_social = np.zeros(batch_count)
    b_time = np.zeros(batch_count)
    ring = np.zeros(max(n0, 1))  # departure times of customers in system
    head = 0
    size = 0
    last_dep = 0.0
    t = 0.0
    last = 0.0
    nserv = 0
    horizon = inter.shape[0] - 1
    per_batch = (horizon - warm) // batch_count
    for k in range(horizon):
        t += inter[k]
        # departures before this arrival
        while size > 0 and ring[head] <= t:
            if k > warm:
                occ[size] += ring[head] - last
            last = ring[head]
            head = (head + 1) % max(n0, 1)
            size -= 1
        if k > warm:
            occ[size] += t - last
        last = t
        if k < warm:
            if size < n0:
                start = t if t > last_dep else last_dep
                last_dep = start + service[nserv]
                nserv += 1
                ring[(head + size) % n0] = last_dep
                size += 1
            continue
        n = size
        arrivals[n] += 1
        b = (k - warm) // per_batch
        if b >= batch_count:
            b = batch_count - 1
        b_time[b] += inter[k + 1]
        if n < n0:
            start = t if t > last_dep else last_dep
            last_dep = start + service[nserv]
            nserv += 1
            ring[(head + size) % n0] = last_dep
            size += 1
            x = last_dep - t
            d = quotes[n]
            excess = x - d if x > d else 0.0
            paid = l * excess
            w = R - p - c * x + paid
            u = w if r == 0.0 else -math.expm1(-r * w) / r
            joins[n] += 1
            late_sum[n] += paid
            late_sq[n] += paid * paid
            util_sum[n] += u
            util_sq[n] += u * u
            b_profit[b] += p - paid
            b_social[b] += p - paid + u
    return occ, arrivals, joins, late_sum, late_sq, util_sum, util_sq, b_profit, b_social, b_time


_kernel = njit(cache=True)(_replication) if njit is not None else _replication


def _mean_ci(values: np.ndarray, confidence: float) -> Interval:
    k = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(k))
    return Interval(mean, float(stats.t.ppf(0.5 + confidence / 2, k - 1)) * se, se)


def _streams(cfg: SimConfig):
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    return [np.random.Generator(np.random.PCG64(ss)) for ss in seeds]


def simulate(s: Scenario, policy: QuotationPolicy, cfg: SimConfig = SimConfig(), check: bool = True) -> SimEstimate:
    """Simulate ``cfg.replications`` independent runs of ``cfg.horizon`` arrivals each."""
    if s.r > 0 and not s.feasible_service:
        raise InfeasibleServiceError("simulation needs mu > r(c - l)")
    if check:
        verify_policy(s, policy)
    n0 = policy.threshold
    quotes = np.array([policy.quote(n) for n in range(n0 + 1)], dtype=float)
    warm = int(cfg.warmup * cfg.horizon)
    reps = []
    for rng in _streams(cfg):
        inter = rng.exponential(1.0 / s.lam, cfg.horizon + 1)
        service = rng.exponential(1.0 / s.mu, cfg.horizon)
        reps.append(_kernel(inter, service, quotes, n0, s.p, s.c, s.l, s.r, s.R, warm, cfg.batch_count))
    return _summarize(reps, cfg)


def _summarize(reps, cfg: SimConfig) -> SimEstimate:
    occ = np.array([r[0] / r[0].sum() for r in reps])
    arrivals = np.array([r[1] for r in reps])
    joins = np.array([r[2] for r in reps])
    b_profit = np.array([r[7] for r in reps])
    b_social = np.array([r[8] for r in reps])
    b_time = np.array([r[9] for r in reps])
    if cfg.replications > 1:
        profit = _mean_ci(b_profit.sum(1) / b_time.sum(1), cfg.confidence)
        social = _mean_ci(b_social.sum(1) / b_time.sum(1), cfg.confidence)
    else:
        profit = _mean_ci(b_profit[0] / b_time[0], cfg.confidence)
        social = _mean_ci(b_social[0] / b_time[0], cfg.confidence)
    tot_join = joins.sum(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        late_mean, late_se = _per_state(np.array([r[3] for r in reps]), np.array([r[4] for r in reps]), joins)
        util_mean, util_se = _per_state(np.array([r[5] for r in reps]), np.array([r[6] for r in reps]), joins)
        join_frac = tot_join / arrivals.sum(0)
    occ_mean = occ.mean(0)
    if cfg.replications > 1:
        occ_se = occ.std(0, ddof=1) / math.sqrt(cfg.replications)
    else:
        occ_se = np.full_like(occ_mean, np.nan)
    return SimEstimate(
        profit, social, occ_mean, occ_se, join_frac, late_mean, late_se, util_mean, util_se,
        arrivals.sum(0), cfg.replications,
    )


def _per_state(sums: np.ndarray, sqs: np.ndarray, counts: np.ndarray):
    """Pooled per-state mean with a standard error.

    Successive sojourns are correlated, so with several replications the
    spread of replication means is used; one replication falls back to
    the i.i.d. formula.
    """
    total = counts.sum(0)
    mean = sums.sum(0) / total
    se = np.sqrt(np.maximum(sqs.sum(0) / total - mean**2, 0) / total)
    if len(sums) > 1:
        ok = (counts > 0).all(0)
        rep_means = sums[:, ok] / counts[:, ok]
        se[ok] = rep_means.std(0, ddof=1) / math.sqrt(len(sums))
    return mean, se


def estimate_state_utility(s: Scenario, policy: QuotationPolicy, cfg: SimConfig, n: int) -> Interval:
    """Mean realized utility at state ``n`` from direct Erlang(n+1, mu) draws.

    Uses ``cfg.replications`` independent streams of ``cfg.horizon`` draws.
    """
    d = policy.quote(n)
    means = []
    for rng in _streams(cfg):
        x = rng.gamma(n + 1, 1.0 / s.mu, cfg.horizon)
        w = s.R - s.p - s.c * x + (s.l * np.maximum(x - d, 0.0) if d != INF else 0.0)
        u = w if s.r == 0 else -np.expm1(-s.r * w) / s.r
        means.append(u.mean())
    means = np.array(means)
    if len(means) == 1:
        se = float(u.std(ddof=1) / math.sqrt(len(u)))
        return Interval(float(means[0]), float(stats.norm.ppf(0.5 + cfg.confidence / 2)) * se, se)
    return _mean_ci(means, cfg.confidence)
