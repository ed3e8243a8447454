"""Simulation engines.

Two engines live here. The stochastic engine generates a miner's block
history under an attacker behavior model and applies the sliding
commitment-validity test to every window, for detection-rate and
false-positive experiments. The deterministic engine advances expected
block times under a hash-rate preference schedule to compare difficulty
adjustment rules; it samples nothing.

Generative model of the stochastic engine: network blocks arrive with
Expon(T) inter-arrival times (total actual hash rate is held constant;
honest background miners absorb whatever the studied miner does), and
each block is assigned to the studied miner with probability equal to
their current actual fraction of the total. The miner's commitment
follows a geometric random walk, stepped once per network block with a
1% step, sticky-clamped at the network total. Honest reports equal the
time-weighted average of the actual rate over the interval, which makes
the normalized inter-arrival statistics exactly unit-exponential under
honesty (thinning a Poisson process by a predictable rate is a Cox
process; its compensator is exponential of rate one).

Trials are embarrassingly parallel: each derives its own random stream
from (seed, trial index), so results do not depend on worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .daa import CW_WINDOW, DAA_KEYS, bch_difficulty, bm_difficulty, warmup_window
from .errors import ConfigError
from .protocol import NetworkParams, constrain_commitment
from .stats import RngStream, ks_critical_delta
from .validity import ValidityParams, params_for

__all__ = [
    "BehaviorKind",
    "BehaviorModel",
    "DetectionConfig",
    "TrialResult",
    "DEFAULT_PREFERENCE_SCHEDULE",
    "ExpectedTimeSeries",
    "run_detection_trial",
    "run_detection_batch",
    "detection_curve",
    "run_expected_time_sim",
]


class BehaviorKind(Enum):
    HONEST_RANDOM_WALK = "honest"
    SHORT_RANGE_DISHONEST = "short"
    LONG_RANGE_DISHONEST = "long"
    PREFERENCE_FOLLOWER = "preference"


@dataclass(frozen=True)
class BehaviorModel:
    """How a miner's actual rate, commitments, and reports evolve.

    walk_sd: relative step of the commitment walk per network block.
    walk_floor: lower bound of the walk as a fraction of the initial
        commitment. A walk allowed to reach zero stalls block production
        indefinitely (the trial would wait forever for the next block),
        so the walk is kept inside [floor * initial, network total].
    drop_factor: fraction of commitment actually mined during a
        short-range episode.
    drop_duration_s: optional wall-clock cap on an episode; episodes
        normally end after the short window's worth of blocks, which at
        the dropped rate takes about a week.
    preference_schedule: (start day, fraction of available rate) steps for
        the deterministic engine.
    kappa: bond fraction a preference follower will sacrifice per block.
    """

    kind: BehaviorKind
    walk_sd: float = 0.01
    walk_floor: float = 0.1
    drop_factor: float = 0.2
    drop_duration_s: float | None = None
    preference_schedule: tuple[tuple[float, float], ...] | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.walk_sd < 0 or self.drop_factor < 0:
            raise ConfigError("behavior fractions must be nonnegative")
        if not 0.0 < self.walk_floor < 1.0:
            raise ConfigError("walk floor must be a fraction in (0, 1)")
        if self.preference_schedule is not None:
            days = [d for d, _ in self.preference_schedule]
            if days != sorted(set(days)):
                raise ConfigError("preference schedule days must strictly increase")


@dataclass(frozen=True)
class DetectionConfig:
    """One detection experiment: a miner fraction, a behavior, a horizon."""

    attacker_fraction: float
    behavior: BehaviorModel
    duration_s: float  # wall-clock simulated after the bootstrap window fills
    trials: int
    seed: int
    target_time_s: float = 600.0
    params: ValidityParams | None = None
    keep_series: bool = False

    def __post_init__(self):
        if not 0.005 <= self.attacker_fraction <= 1.0:
            raise ConfigError(
                f"attacker fraction {self.attacker_fraction} outside [0.005, 1]"
            )
        if self.trials < 1:
            raise ConfigError("at least one trial required")
        if self.duration_s < 0:
            raise ConfigError("duration must be nonnegative")

    def resolved_params(self) -> ValidityParams:
        return self.params or params_for(self.attacker_fraction)


@dataclass
class TrialResult:
    """Outcome of one seeded trial.

    Window outcomes exist only from the first block whose history fills
    the long window. Times are absolute simulation seconds; anchor curves
    at bootstrap_end_s for post-bootstrap axes.
    """

    trial: int
    bootstrap_end_s: float
    window_heights: np.ndarray
    window_times_s: np.ndarray
    window_valid: np.ndarray
    first_failure_time_s: float | None
    n_blocks: int
    inter_arrival_s: np.ndarray | None = None
    x_values: np.ndarray | None = None
    block_times_s: np.ndarray | None = None

    @property
    def detected(self) -> bool:
        return self.first_failure_time_s is not None

    @property
    def n_windows(self) -> int:
        return int(self.window_valid.size)

    @property
    def n_failures(self) -> int:
        return int(np.sum(~self.window_valid))

    def cumulative_detection(self) -> np.ndarray:
        """1 from the first failing window onward, else 0; per window."""
        return (np.cumsum(~self.window_valid) > 0).astype(np.int8)


def _sticky_log_walk(start: float, steps: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """L_k = clip(L_{k-1} + s_k, lo, hi), vectorized.

    Between barrier contacts the path is a plain cumulative sum; a stretch
    that leans on one barrier is the closed form of the one-sided Lindley
    recursion (v_k = max(0, v_{k-1} + s_k) solves to
    v_k = S_k - min(0, min_{j<=k} S_j)). Segments alternate only when the
    path crosses the full band, so the loop runs a handful of times.
    """
    n = steps.size
    out = np.empty(n)
    i = 0
    pos = start
    at = 0  # -1 leaning on lo, +1 leaning on hi, 0 interior
    while i < n:
        s = np.cumsum(steps[i:])
        if at == 0:
            path = pos + s
            hit = (path <= lo) | (path >= hi)
            j = int(np.argmax(hit)) if hit.any() else -1
            if j < 0:
                out[i:] = path
                return out
            out[i : i + j + 1] = np.clip(path[: j + 1], lo, hi)
            at = -1 if path[j] <= lo else 1
            pos = lo if at == -1 else hi
            i += j + 1
            continue
        if at == -1:
            v = s - np.minimum.accumulate(np.minimum(s, 0.0))
            path = lo + v
            cross = path >= hi
        else:
            u = (-s) - np.minimum.accumulate(np.minimum(-s, 0.0))
            path = hi - u
            cross = path <= lo
        j = int(np.argmax(cross)) if cross.any() else -1
        if j < 0:
            out[i:] = np.clip(path, lo, hi)
            return out
        out[i : i + j + 1] = np.clip(path[: j + 1], lo, hi)
        at = -at
        pos = lo if at == -1 else hi
        i += j + 1
    return out


class _WalkState:
    """Carries the commitment walk and partial-interval sums across chunks."""

    __slots__ = ("log_rel", "carry_t", "carry_wt", "ep_active", "ep_blocks", "ep_start")

    def __init__(self):
        self.log_rel = 0.0  # log of commitment relative to its initial value
        self.carry_t = 0.0
        self.carry_wt = 0.0
        self.ep_active = False
        self.ep_blocks = 0
        self.ep_start = 0.0


def _simulate_blocks(config: DetectionConfig, rng: RngStream):
    """Generate the studied miner's blocks until both the long window is
    filled and the post-bootstrap horizon has elapsed.

    Returns (inter_arrival_s, x_values, block_times_s, bootstrap_end_s).
    """
    kind = config.behavior.kind
    params = config.resolved_params()
    n_s, n_l = params.n_s, params.n_l
    q = config.attacker_fraction
    T = config.target_time_s
    total = 1.0  # normalized network rate; everything scales out
    c1 = q * total
    walk_sd = config.behavior.walk_sd
    drop = config.behavior.drop_factor
    ep_cap = config.behavior.drop_duration_s
    log_lo = math.log(config.behavior.walk_floor)
    log_hi = math.log(total / c1)

    gen = rng.generator
    st = _WalkState()
    xs: list[float] = []
    gaps_out: list[float] = []
    ts: list[float] = []
    t = 0.0
    boot_end: float | None = None
    avg_difficulty = total * T  # held constant in detection experiments

    def horizon_reached() -> bool:
        if len(xs) < n_l:
            return False
        end = ts[n_l - 1] + config.duration_s
        return t >= end

    while not horizon_reached():
        remaining = max(n_l - len(xs), 1)
        chunk = int(min(max(8192, remaining / q * 1.25), 4_000_000))
        gaps = -T * np.log1p(-gen.random(chunk))
        steps = gen.normal(0.0, walk_sd, size=chunk) if walk_sd > 0 else np.zeros(chunk)
        log_path = _sticky_log_walk(st.log_rel, steps, log_lo, log_hi)
        st.log_rel = float(log_path[-1])
        w = c1 * np.exp(log_path)
        u = gen.random(chunk)

        if kind in (BehaviorKind.HONEST_RANDOM_WALK, BehaviorKind.LONG_RANGE_DISHONEST):
            mined = u < w / total
            idx = np.nonzero(mined)[0]
            tcum = np.cumsum(gaps)
            wtcum = np.cumsum(w * gaps)
            prev_t = 0.0
            prev_wt = 0.0
            done = False
            for k in idx:
                t_i = st.carry_t + (tcum[k] - prev_t)
                wt_i = st.carry_wt + (wtcum[k] - prev_wt)
                prev_t, prev_wt = tcum[k], wtcum[k]
                st.carry_t = st.carry_wt = 0.0
                r_i = c1 if kind is BehaviorKind.LONG_RANGE_DISHONEST else wt_i / t_i
                xs.append(t_i * r_i / avg_difficulty)
                gaps_out.append(t_i)
                ts.append(t + tcum[k])
                if boot_end is None and len(xs) == n_l:
                    boot_end = ts[-1]
                if len(xs) >= n_l and ts[-1] >= ts[n_l - 1] + config.duration_s:
                    done = True
                    break
            if done:
                break
            st.carry_t += tcum[-1] - prev_t
            st.carry_wt += wtcum[-1] - prev_wt
            t += tcum[-1]
            continue

        # short-range: actual rate drops during window-end episodes, which
        # depend on the miner's own block count, so this path is sequential
        for k in range(chunk):
            g = float(gaps[k])
            wk = float(w[k])
            rate = wk * drop if st.ep_active else wk
            st.carry_t += g
            st.carry_wt += wk * g
            t += g
            if u[k] < rate / total:
                t_i = st.carry_t
                r_i = st.carry_wt / st.carry_t  # truthful about the walk only
                xs.append(t_i * r_i / avg_difficulty)
                gaps_out.append(t_i)
                ts.append(t)
                st.carry_t = st.carry_wt = 0.0
                own = len(xs)
                if boot_end is None and own == n_l:
                    boot_end = t
                if st.ep_active:
                    st.ep_blocks += 1
                    if st.ep_blocks >= n_s or (
                        ep_cap is not None and t - st.ep_start >= ep_cap
                    ):
                        st.ep_active = False
                if not st.ep_active and own % n_l == n_l - n_s:
                    st.ep_active = True
                    st.ep_blocks = 0
                    st.ep_start = t
                if own >= n_l and t >= ts[n_l - 1] + config.duration_s:
                    break

    return (
        np.asarray(gaps_out),
        np.asarray(xs),
        np.asarray(ts),
        float(boot_end if boot_end is not None else ts[-1]),
    )


def _shift_replace(arr: np.ndarray, old: float, new: float) -> None:
    """Replace one occurrence of old with new in a sorted array, in place."""
    j = int(np.searchsorted(arr, old))
    k = int(np.searchsorted(arr, new))
    if k > j:
        arr[j : k - 1] = arr[j + 1 : k]
        arr[k - 1] = new
    else:
        arr[k + 1 : j + 1] = arr[k:j]
        arr[k] = new


def _window_deltas_pass(x: np.ndarray, n_s: int, n_l: int, d_s: float, d_l: float):
    """Evaluate the composite test on every sliding window of x.

    Works on v = exp(-x) kept sorted incrementally; for v sorted ascending
    the KS distance is max_i max(|v_i - (i-1)/n|, |v_i - i/n|). Returns a
    bool array, one entry per window ending at heights n_l..len(x).
    """
    m = x.size
    if m < n_l:
        return np.zeros(0, dtype=bool)
    v = np.exp(-x)
    grid_lo_l = np.arange(n_l, dtype=float) / n_l
    grid_hi_l = np.arange(1, n_l + 1, dtype=float) / n_l
    grid_lo_s = np.arange(n_s, dtype=float) / n_s
    grid_hi_s = np.arange(1, n_s + 1, dtype=float) / n_s
    out = np.empty(m - n_l + 1, dtype=bool)
    vl = np.sort(v[:n_l])
    scratch = np.empty(n_l)
    for i in range(n_l - 1, m):
        if i >= n_l:
            _shift_replace(vl, v[i - n_l], v[i])
        np.subtract(vl, grid_lo_l, out=scratch)
        np.abs(scratch, out=scratch)
        delta_l = scratch.max()
        np.subtract(vl, grid_hi_l, out=scratch)
        np.abs(scratch, out=scratch)
        delta_l = max(delta_l, scratch.max())
        vs = np.sort(v[i - n_s + 1 : i + 1])
        delta_s = max(
            np.max(np.abs(vs - grid_lo_s)), np.max(np.abs(vs - grid_hi_s))
        )
        out[i - n_l + 1] = (delta_s <= d_s) and (delta_l <= d_l)
    return out


def run_detection_trial(config: DetectionConfig, trial: int = 0) -> TrialResult:
    """Run one seeded trial and test every sliding window of the history.

    The window verdicts are exactly those of the validity layer: the
    per-window comparison uses critical KS distances that sit on the same
    double-precision boundary as the p-value thresholds.
    """
    params = config.resolved_params()
    rng = RngStream(config.seed, trial)
    gaps, xs, ts, boot_end = _simulate_blocks(config, rng)
    # drop any overshoot past the horizon so results are horizon-exact
    end_time = ts[params.n_l - 1] + config.duration_s
    keep = np.searchsorted(ts, end_time, side="right")
    keep = max(keep, params.n_l)
    gaps, xs, ts = gaps[:keep], xs[:keep], ts[:keep]

    d_s = ks_critical_delta(params.tau_s, params.n_s)
    d_l = ks_critical_delta(params.tau_l, params.n_l)
    ok = _window_deltas_pass(xs, params.n_s, params.n_l, d_s, d_l)
    heights = np.arange(params.n_l, params.n_l + ok.size)
    times = ts[params.n_l - 1 :]
    fail_idx = np.nonzero(~ok)[0]
    first_failure = float(times[fail_idx[0]]) if fail_idx.size else None
    return TrialResult(
        trial=trial,
        bootstrap_end_s=boot_end,
        window_heights=heights,
        window_times_s=times,
        window_valid=ok,
        first_failure_time_s=first_failure,
        n_blocks=int(xs.size),
        inter_arrival_s=gaps if config.keep_series else None,
        x_values=xs if config.keep_series else None,
        block_times_s=ts if config.keep_series else None,
    )


def _run_trial_tuple(args) -> TrialResult:
    config, trial = args
    return run_detection_trial(config, trial)


def run_detection_batch(config: DetectionConfig, workers: int = 1) -> list[TrialResult]:
    """All trials of a config, ordered by trial index regardless of workers."""
    if workers <= 1:
        return [run_detection_trial(config, i) for i in range(config.trials)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        jobs = [(config, i) for i in range(config.trials)]
        return list(pool.map(_run_trial_tuple, jobs, chunksize=4))


def detection_curve(trials, grid_s) -> np.ndarray:
    """Fraction of trials whose first failure occurred within t of the end
    of bootstrapping, for each t in grid_s. Non-decreasing in t."""
    results = list(trials)
    if not results:
        raise ValueError("detection_curve needs at least one trial")
    grid = np.asarray(grid_s, dtype=float)
    rel = np.array(
        [
            (r.first_failure_time_s - r.bootstrap_end_s)
            if r.first_failure_time_s is not None
            else np.inf
            for r in results
        ]
    )
    return np.array([np.mean(rel <= t) for t in grid])


# Hash-rate preference steps for the difficulty-rule comparison: fractions
# of the total available rate, each holding from its start day to the next.
DEFAULT_PREFERENCE_SCHEDULE: tuple[tuple[float, float], ...] = (
    (1, 0.10),
    (2, 0.075),
    (3, 0.225),
    (4, 0.113),
    (5, 0.225),
    (6, 0.281),
    (7, 0.563),
    (8, 0.422),
    (9, 0.211),
)


def _preference_at(schedule, t_s: float) -> float:
    p = schedule[0][1]
    for day, frac in schedule:
        if t_s >= (day - 1) * 86400.0:
            p = frac
    return p


@dataclass
class ExpectedTimeSeries:
    """Per-block deterministic series from the expected-time engine."""

    daa_key: str
    kappa: float | None
    time_s: np.ndarray
    preference_fraction: np.ndarray
    commitment_hps: np.ndarray
    actual_rate_hps: np.ndarray
    difficulty_hashes: np.ndarray
    expected_block_time_s: np.ndarray


def run_expected_time_sim(
    daa_key: str,
    behavior: BehaviorModel,
    net: NetworkParams,
    duration_s: float,
    n_miners: int = 10,
    commitment_window: int = 1000,
    total_rate_hps: float = 1.0,
) -> ExpectedTimeSeries:
    """Advance expected block times deterministically under a preference
    schedule, letting the chosen difficulty rule respond.

    Each block lasts exactly its expected time, difficulty / total actual
    rate. Under the baseline rule miners realize their preference
    immediately. Under the commitment rule the network is n_miners equal
    miners who are fully bonded, refresh their commitment only on their
    own blocks (round robin, so once every n_miners blocks), may not
    commit above mu times their trailing average commitment, and mine
    within the rate band their cost tolerance kappa permits around their
    commitment; kappa >= 1 tolerates the whole penalty, so the preference
    is followed exactly.
    """
    if daa_key not in DAA_KEYS:
        raise ConfigError(f"unknown difficulty rule {daa_key!r}; expected {DAA_KEYS}")
    if behavior.kind is not BehaviorKind.PREFERENCE_FOLLOWER:
        raise ConfigError("expected-time engine requires a preference follower")
    schedule = behavior.preference_schedule or DEFAULT_PREFERENCE_SCHEDULE
    kappa = behavior.kappa if behavior.kappa is not None else 0.25
    T = net.target_time_s

    rows_t, rows_p, rows_c, rows_h, rows_d, rows_tau = [], [], [], [], [], []
    t = 0.0
    p0 = _preference_at(schedule, 0.0)

    if daa_key == "bch-cw144":
        difficulty = p0 * total_rate_hps * T
        window = list(warmup_window(difficulty, T))
        while t < duration_s:
            pref = _preference_at(schedule, t)
            h = pref * total_rate_hps
            tau = difficulty / h
            rows_t.append(t)
            rows_p.append(pref)
            rows_c.append(h)  # no commitments under the baseline rule
            rows_h.append(h)
            rows_d.append(difficulty)
            rows_tau.append(tau)
            t += tau
            window.append((difficulty, tau))
            window = window[-CW_WINDOW:]
            difficulty = bch_difficulty(window, T)
    else:
        avail = total_rate_hps / n_miners
        commitments = [p0 * avail] * n_miners
        histories = [[p0 * avail] * commitment_window for _ in range(n_miners)]
        i = 0
        while t < duration_s:
            pref = _preference_at(schedule, t)
            c_total = sum(commitments)
            difficulty = bm_difficulty(c_total, T)
            if kappa >= 1.0:
                h = pref * total_rate_hps
            else:
                h = sum(
                    min(max(pref * avail, c * (1.0 - kappa)), c * (1.0 + kappa))
                    for c in commitments
                )
            tau = difficulty / h
            rows_t.append(t)
            rows_p.append(pref)
            rows_c.append(c_total)
            rows_h.append(h)
            rows_d.append(difficulty)
            rows_tau.append(tau)
            t += tau
            # the miner of this block refreshes their commitment for the next
            m = i % n_miners
            commitments[m] = constrain_commitment(
                pref * avail, histories[m], net.mu
            )
            histories[m].append(commitments[m])
            histories[m].pop(0)
            i += 1

    return ExpectedTimeSeries(
        daa_key=daa_key,
        kappa=kappa if daa_key == "bm" else None,
        time_s=np.asarray(rows_t),
        preference_fraction=np.asarray(rows_p),
        commitment_hps=np.asarray(rows_c),
        actual_rate_hps=np.asarray(rows_h),
        difficulty_hashes=np.asarray(rows_d),
        expected_block_time_s=np.asarray(rows_tau),
    )
