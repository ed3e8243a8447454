"""Exponential-distribution utilities and the one-sample Kolmogorov-Smirnov test.

Everything here is pure: given the same inputs (and the same RngStream
state) the same outputs come back, so any of it can run concurrently.

The KS survival function is the load-bearing piece. Window thresholds in
the validity layer go down to 1e-12, which lives far out in the tail of
the null distribution, and the smallest window size is 2, where the
asymptotic distribution is useless. We therefore evaluate the null
exactly for small n and switch to the asymptotic series (with a
conservative log-space fallback) for large n; see ``ks_pvalue``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import kstwo

__all__ = [
    "EXACT_N_MAX",
    "P_FLOOR",
    "KsOutcome",
    "RngStream",
    "exp_quantile",
    "exp_sample",
    "ks_statistic",
    "ks_pvalue",
    "ks_critical_delta",
]

# Largest sample count for which the exact two-sided null distribution is
# evaluated; beyond this the asymptotic series is accurate and much cheaper.
EXACT_N_MAX = 140

# Reported p-values are clamped at the smallest positive double rather than
# underflowing to an exact zero.
P_FLOOR = 5e-324


@dataclass
class KsOutcome:
    """Result of a KS evaluation: the statistic, the sample count, and
    (once computed) the p-value."""

    delta: float
    n: int
    p_value: float | None = None


@dataclass
class RngStream:
    """A reproducible, independently seeded random stream.

    Streams are derived from (seed, stream) through SeedSequence spawn
    keys, so distinct stream ids never collide and the same pair always
    replays the same sequence. One instance per logical consumer; never
    share an instance across threads.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def spawn(self, child: int) -> "RngStream":
        """Derive a child stream; (seed, stream, child) is collision-free."""
        out = RngStream(self.seed, self.stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, child))
        out._gen = np.random.Generator(np.random.PCG64(ss))
        return out


def exp_quantile(p: float, mean: float) -> float:
    """Quantile function of Expon(mean): the time below which a draw falls
    with probability p.

    Raises ValueError unless 0 <= p < 1 and mean > 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"quantile probability must be in [0, 1), got {p}")
    if not mean > 0.0:
        raise ValueError(f"exponential mean must be positive, got {mean}")
    return -mean * math.log1p(-p)


def exp_sample(mean: float, rng: RngStream, size: int | None = None):
    """Inverse-transform draw(s) from Expon(mean).

    Uses -mean*log(1-U) so the draw is a deterministic function of the
    stream's next uniform(s).
    """
    if not mean > 0.0:
        raise ValueError(f"exponential mean must be positive, got {mean}")
    u = rng.random(size)
    return -mean * np.log1p(-u) if size is not None else -mean * math.log1p(-u)


def ks_statistic(samples) -> KsOutcome:
    """Two-sided KS distance between a sample and the unit-exponential CDF.

    delta = max over sorted x_(i) of max(|i/n - F(x_(i))|, |(i-1)/n - F(x_(i))|)
    with F(x) = 1 - exp(-x). Both one-sided gaps are evaluated at every
    sorted sample, duplicates included, so tied values are legal input.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("ks_statistic needs a non-empty 1-d sample")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite and nonnegative")
    n = x.size
    cdf = -np.expm1(-np.sort(x))
    hi = np.arange(1, n + 1) / n
    delta = float(max(np.max(np.abs(hi - cdf)), np.max(np.abs(hi - 1.0 / n - cdf))))
    return KsOutcome(delta=delta, n=n)


def ks_pvalue(delta: float, n: int) -> float:
    """P(KS statistic >= delta) for n samples under the null.

    Exact two-sided null distribution for n <= EXACT_N_MAX; the asymptotic
    Kolmogorov series at sqrt(n)*delta above that, falling back to the
    conservative leading term 2*exp(-2*n*delta^2), evaluated in log space,
    once the series underflows. Output is clamped to [P_FLOOR, 1] and is
    non-increasing in delta at fixed n.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError(f"sample count must be a positive integer, got {n}")
    if not 0.0 <= delta <= 1.0 or math.isnan(delta):
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    # The statistic can never fall below 1/(2n): the whole support is below it.
    if delta <= 0.5 / n:
        return 1.0
    if delta >= 1.0:
        return P_FLOOR
    if n <= EXACT_N_MAX:
        p = float(kstwo.sf(delta, n))
    else:
        p = float(kolmogorov(math.sqrt(n) * delta))
        if p <= 0.0:
            log_p = math.log(2.0) - 2.0 * n * delta * delta
            p = math.exp(log_p) if log_p > -744.0 else 0.0
    return min(1.0, max(p, P_FLOOR))


def ks_critical_delta(tau: float, n: int) -> float:
    """Largest double d with ks_pvalue(d, n) > tau.

    Lets hot loops replace a p-value computation per window with a single
    comparison: ks_pvalue(delta, n) > tau  iff  delta <= ks_critical_delta(tau, n),
    exactly, by monotonicity of the survival function.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    lo, hi = 0.5 / n, 1.0
    if ks_pvalue(lo, n) <= tau:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if ks_pvalue(mid, n) > tau:
            lo = mid
        else:
            hi = mid
    # land exactly on the boundary double
    while ks_pvalue(np.nextafter(lo, 1.0), n) > tau:
        lo = float(np.nextafter(lo, 1.0))
    return lo
