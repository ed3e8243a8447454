"""Bonded hash-rate commitment mining: protocol ledger, validity testing,
difficulty adjustment, and simulation harness."""

from .daa import DAA_KEYS, DifficultyState, bch_difficulty, bm_difficulty
from .errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    InternalInvariantError,
    ProtocolViolationError,
    UnsupportedHashRateError,
)
from .protocol import (
    BlockRecord,
    BondState,
    Event,
    MinerAccount,
    NetworkParams,
    check_abandonment,
    constrain_commitment,
    divest,
    on_block_mined,
    reconcile_amount,
    scale_bootstrapping,
)
from .sim import (
    BehaviorKind,
    BehaviorModel,
    DetectionConfig,
    TrialResult,
    detection_curve,
    run_detection_batch,
    run_detection_trial,
    run_expected_time_sim,
)
from .stats import KsOutcome, RngStream, exp_quantile, exp_sample, ks_pvalue, ks_statistic
from .validity import (
    ReportedInterval,
    ValidityParams,
    ks_test,
    params_for,
    transform,
    valid,
)

__version__ = "0.1.0"
