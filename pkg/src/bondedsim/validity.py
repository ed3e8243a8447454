"""Commitment-validity testing over a miner's own block history.

A miner's inter-block times, normalized by their reported hash rate and
the prevailing difficulty, are unit-exponential exactly when the reports
are truthful. The composite test runs a KS goodness-of-fit check over a
short window (catches abrupt rate drops) and a long window (catches slow
systematic drift); a window fails when its KS p-value drops below the
tier's threshold. Per-window false-positive probability is bounded by
tau_s + tau_l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, UnsupportedHashRateError
from .stats import ks_pvalue, ks_statistic

__all__ = [
    "MIN_COMMIT_FRACTION",
    "VALIDITY_POLICY",
    "ReportedInterval",
    "ValidityParams",
    "transform",
    "ks_test",
    "valid",
    "params_for",
]


@dataclass(frozen=True)
class ValidityParams:
    """Window sizes and p-value thresholds for the composite test."""

    n_s: int
    n_l: int
    tau_s: float
    tau_l: float

    def __post_init__(self):
        if not 1 <= self.n_s < self.n_l:
            raise ValueError(f"need 1 <= n_s < n_l, got n_s={self.n_s} n_l={self.n_l}")
        if not (0.0 < self.tau_s < 1.0 and 0.0 < self.tau_l < 1.0):
            raise ValueError("thresholds must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class ReportedInterval:
    """One inter-block interval as attested on-chain by the miner.

    inter_arrival_s: seconds since the miner's previous block.
    reported_rate_hps: attested average hash rate over the interval.
    avg_difficulty_hashes: time-weighted mean network difficulty over the
    interval, in expected hashes per block.
    """

    inter_arrival_s: float
    reported_rate_hps: float
    avg_difficulty_hashes: float


# Test parameters per committed hash-rate fraction. Window sizes scale with
# the fraction so that every tier's short window spans about 1.5 days of
# expected mining time and the long window about 70 days; thresholds are
# tuned so a year of honest mining almost never trips either test.
VALIDITY_POLICY: tuple[tuple[float, ValidityParams], ...] = (
    (0.01, ValidityParams(2, 100, 1e-7, 1e-7)),
    (0.10, ValidityParams(20, 1000, 1e-10, 1e-10)),
    (0.25, ValidityParams(50, 2500, 1e-12, 1e-12)),
    (0.50, ValidityParams(100, 5000, 1e-12, 1e-12)),
)

# Below this committed fraction the short window would need fewer than one
# block, so such commitments are rejected outright.
MIN_COMMIT_FRACTION = 0.005


def params_for(commit_fraction: float) -> ValidityParams:
    """Validity parameters for a miner committing this fraction of the total.

    Picks the nearest policy tier at or below the fraction (conservative:
    smaller windows and looser thresholds than any higher tier). Fractions
    between the supported minimum and the first tier use the first tier.
    """
    if not commit_fraction >= MIN_COMMIT_FRACTION:
        raise UnsupportedHashRateError(
            f"committed fraction {commit_fraction} is below the supported "
            f"minimum {MIN_COMMIT_FRACTION}"
        )
    chosen = VALIDITY_POLICY[0][1]
    for threshold, params in VALIDITY_POLICY:
        if commit_fraction >= threshold:
            chosen = params
    return chosen


def transform(intervals) -> np.ndarray:
    """Normalize intervals to unit-exponential scale, order preserved.

    X_i = inter_arrival * reported_rate / avg_difficulty. Truthful reports
    make the X_i independent Expon(1) draws; the ratio form means any
    common rescaling of rate and difficulty cancels.
    """
    if len(intervals) == 0:
        raise ValueError("transform needs at least one interval")
    t = np.array([iv.inter_arrival_s for iv in intervals], dtype=float)
    r = np.array([iv.reported_rate_hps for iv in intervals], dtype=float)
    d = np.array([iv.avg_difficulty_hashes for iv in intervals], dtype=float)
    if np.any(t <= 0):
        raise ValueError("inter-arrival times must be positive")
    if np.any(r < 0):
        raise ValueError("reported rates must be nonnegative")
    if np.any(d <= 0):
        raise ValueError("average difficulty must be positive")
    return t * r / d


def ks_test(intervals, n: int, tau: float) -> int:
    """Binary KS test over the most recent n intervals.

    Returns 1 when the window's p-value exceeds tau, 0 otherwise; by
    construction an honest window fails with probability tau. Fewer than
    n intervals is an InsufficientDataError, never an implicit verdict.
    """
    if len(intervals) < n:
        raise InsufficientDataError(
            f"window needs {n} intervals, only {len(intervals)} available"
        )
    x = transform(intervals[-n:])
    outcome = ks_statistic(x)
    outcome.p_value = ks_pvalue(outcome.delta, outcome.n)
    return int(outcome.p_value > tau)


def valid(intervals, params: ValidityParams) -> int:
    """Composite short-and-long window test: the product of both KS tests."""
    if len(intervals) < params.n_l:
        raise InsufficientDataError(
            f"composite test needs {params.n_l} intervals, "
            f"only {len(intervals)} available"
        )
    return ks_test(intervals, params.n_s, params.tau_s) * ks_test(
        intervals, params.n_l, params.tau_l
    )
