"""Bonded-miner ledger and state machine.

Every block a miner contributes locks one more bond deposit; deposits are
released strictly FIFO, one per block once the miner's history spans a
full long test window, scaled by how well the newest block's report
matches its commitment. A failed validity test, or going silent past the
abandonment deadline, burns everything still locked.

All mutations go through a serialized event stream per simulation
(single writer); read-only snapshots may be shared freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import InternalInvariantError, ProtocolViolationError
from .stats import exp_quantile
from .validity import ReportedInterval, ValidityParams, valid

__all__ = [
    "BondState",
    "NetworkParams",
    "BlockRecord",
    "Deposit",
    "MinerAccount",
    "Event",
    "reconcile_amount",
    "constrain_commitment",
    "scale_bootstrapping",
    "check_abandonment",
    "on_block_mined",
    "divest",
    "assert_conservation",
    "write_event_log",
    "read_event_log",
]


class BondState(Enum):
    BOOTSTRAPPING = "bootstrapping"
    FULLY_BONDED = "fully_bonded"
    DIVESTED = "divested"
    ABANDONED = "abandoned"


_ALLOWED_TRANSITIONS = {
    (BondState.BOOTSTRAPPING, BondState.FULLY_BONDED),
    (BondState.FULLY_BONDED, BondState.BOOTSTRAPPING),
    (BondState.BOOTSTRAPPING, BondState.ABANDONED),
    (BondState.FULLY_BONDED, BondState.ABANDONED),
    (BondState.ABANDONED, BondState.DIVESTED),
    (BondState.FULLY_BONDED, BondState.DIVESTED),
    (BondState.DIVESTED, BondState.BOOTSTRAPPING),
}


@dataclass
class NetworkParams:
    """Chain-wide constants.

    target_time_s: desired inter-block interval.
    bond_coins: coins deposited per mined block.
    mu: max multiple of a miner's trailing average commitment.
    gamma: cap on the commitment fraction held by bootstrapping miners.
    abandon_p: quantile probability for the abandonment deadline.
    """

    target_time_s: float = 600.0
    bond_coins: float = 1.0
    mu: float = 2.0
    gamma: float = 0.05
    abandon_p: float = 0.99999

    def __post_init__(self):
        if self.target_time_s <= 0:
            raise ValueError("target block time must be positive")
        if self.bond_coins < 0:
            raise ValueError("bond must be nonnegative")
        if self.mu < 1:
            raise ValueError("mu must be at least 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.abandon_p < 1.0:
            raise ValueError("abandonment quantile must be in (0, 1)")


@dataclass
class BlockRecord:
    """One block mined by one miner, as the ledger sees it."""

    height: int
    miner_id: str
    timestamp_s: float
    inter_arrival_s: float
    report_hps: float
    next_commitment_hps: float
    avg_difficulty_hashes: float
    reconciliation_coins: float = 0.0


@dataclass
class Deposit:
    """A locked per-block bond, remembering its block's report/commitment
    pair so divestment can settle it."""

    height: int
    amount: float
    report_hps: float
    commitment_hps: float
    reconciled: bool = False


@dataclass
class Event:
    kind: str  # deposit | block | reconcile | slash | abandon | divest | state
    miner_id: str
    time_s: float
    height: int | None = None
    amount: float | None = None
    detail: str | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if v is not None}
        return json.dumps(d, sort_keys=True)


@dataclass
class MinerAccount:
    """Per-miner protocol state: bond ledger, commitment and report history."""

    miner_id: str
    params: ValidityParams
    initial_commitment_hps: float
    state: BondState = BondState.BOOTSTRAPPING
    commitments: list[float] = field(default_factory=list)  # c_i per own block
    reports: list[float] = field(default_factory=list)
    blocks: list[BlockRecord] = field(default_factory=list)
    deposits: list[Deposit] = field(default_factory=list)
    total_deposited: float = 0.0
    total_reconciled: float = 0.0
    total_slashed: float = 0.0
    coinbase_blocks: int = 0  # opportunity-cost counter only

    def __post_init__(self):
        if not self.commitments:
            # the commitment for the first block is stipulated up front
            self.commitments.append(self.initial_commitment_hps)

    @property
    def locked_bond(self) -> float:
        return sum(d.amount for d in self.deposits if not d.reconciled)

    @property
    def undisbursed_count(self) -> int:
        return sum(1 for d in self.deposits if not d.reconciled)

    @property
    def latest_commitment(self) -> float:
        return self.commitments[-1]

    @property
    def last_block_time(self) -> float | None:
        return self.blocks[-1].timestamp_s if self.blocks else None

    def intervals(self) -> list[ReportedInterval]:
        return [
            ReportedInterval(b.inter_arrival_s, b.report_hps, b.avg_difficulty_hashes)
            for b in self.blocks
        ]

    def _transition(self, new_state: BondState, time_s: float) -> Event:
        if (self.state, new_state) not in _ALLOWED_TRANSITIONS:
            raise ProtocolViolationError(
                f"illegal bond-state transition {self.state.value} -> {new_state.value}"
            )
        old = self.state
        self.state = new_state
        return Event(
            "state", self.miner_id, time_s, detail=f"{old.value}->{new_state.value}"
        )


def reconcile_amount(report_hps: float, commitment_hps: float, bond: float) -> float:
    """Refund for one deposit: the bond less its deviation penalty.

    f = b - b * min(1, |report - commitment| / commitment), so f == b
    exactly when the report matches the commitment and f == 0 once the
    relative deviation reaches 100%.
    """
    if commitment_hps <= 0:
        raise ValueError("commitment must be positive at reconciliation")
    if bond < 0:
        raise ValueError("bond must be nonnegative")
    deviation = min(1.0, abs(report_hps - commitment_hps) / commitment_hps)
    return bond - bond * deviation


def constrain_commitment(proposed_hps: float, history, mu: float) -> float:
    """Clamp a proposed commitment to mu times the trailing average.

    Only increases are constrained; a miner may always commit less. The
    result is never negative.
    """
    hist = list(history)
    if not hist:
        raise InternalInvariantError("commitment constraint needs a history")
    cap = mu * (sum(hist) / len(hist))
    return max(0.0, min(proposed_hps, cap))


def scale_bootstrapping(boot_commitments, total_commitment: float, gamma: float):
    """Cut bootstrapping commitments proportionally under the gamma cap.

    If their sum exceeds gamma * total_commitment every bootstrapping
    commitment is scaled by the same factor so the sum lands exactly on
    the cap; otherwise they pass through unchanged.
    """
    boot = [float(c) for c in boot_commitments]
    total_boot = sum(boot)
    cap = gamma * total_commitment
    if total_boot <= cap or total_boot == 0.0:
        return boot
    factor = cap / total_boot
    return [c * factor for c in boot]


def check_abandonment(
    account: MinerAccount,
    now_s: float,
    net: NetworkParams,
    total_commitment_hps: float,
) -> tuple[bool, list[Event]]:
    """Flag a miner who has gone silent past the abandonment deadline.

    The deadline is the abandon_p quantile of the miner's expected
    inter-block distribution, Expon(T * total_commitment / own commitment).
    A flagged miner burns all locked bond and moves through Abandoned to
    Divested.
    """
    if account.state not in (BondState.BOOTSTRAPPING, BondState.FULLY_BONDED):
        return False, []
    c = account.latest_commitment
    if c <= 0:
        return False, []
    last = account.last_block_time
    if last is None:
        return False, []
    mean = net.target_time_s * total_commitment_hps / c
    deadline = exp_quantile(net.abandon_p, mean)
    if now_s - last <= deadline:
        return False, []
    events = [_burn_all(account, now_s, "abandonment")]
    events.insert(0, Event("abandon", account.miner_id, now_s))
    events.append(account._transition(BondState.ABANDONED, now_s))
    events.append(account._transition(BondState.DIVESTED, now_s))
    return True, events


def _burn_all(account: MinerAccount, time_s: float, why: str) -> Event:
    burned = 0.0
    for dep in account.deposits:
        if not dep.reconciled:
            burned += dep.amount
            dep.reconciled = True
    account.total_slashed += burned
    return Event("slash", account.miner_id, time_s, amount=burned, detail=why)


def on_block_mined(
    account: MinerAccount, block: BlockRecord, net: NetworkParams
) -> list[Event]:
    """Apply one freshly mined block to the miner's account.

    Locks a new deposit, records the report and next commitment, and once
    the history spans a full long window runs the composite validity test:
    a failure burns all locked bond and forces divestment, a pass past the
    window releases the oldest deposit scaled by the newest block's
    commitment fulfilment.
    """
    if account.state not in (BondState.BOOTSTRAPPING, BondState.FULLY_BONDED):
        raise ProtocolViolationError(
            f"{account.miner_id} cannot mine while {account.state.value}"
        )
    if account.blocks and block.timestamp_s <= account.blocks[-1].timestamp_s:
        raise ValueError("block timestamps must be strictly increasing")
    if block.inter_arrival_s <= 0:
        raise ValueError("inter-arrival must be positive")

    commitment_now = account.latest_commitment  # c_i, pledged for this block
    account.blocks.append(block)
    account.reports.append(block.report_hps)
    account.commitments.append(block.next_commitment_hps)
    account.coinbase_blocks += 1

    dep = Deposit(
        height=block.height,
        amount=net.bond_coins,
        report_hps=block.report_hps,
        commitment_hps=commitment_now,
    )
    account.deposits.append(dep)
    account.total_deposited += net.bond_coins
    events = [
        Event("block", account.miner_id, block.timestamp_s, height=block.height),
        Event(
            "deposit",
            account.miner_id,
            block.timestamp_s,
            height=block.height,
            amount=net.bond_coins,
        ),
    ]

    n = account.params.n_l
    mined = len(account.blocks)
    # the n-th deposit completes the bond before the first test can run
    if account.state is BondState.BOOTSTRAPPING and account.undisbursed_count >= n:
        events.append(account._transition(BondState.FULLY_BONDED, block.timestamp_s))

    if mined >= n:
        verdict = valid(account.intervals(), account.params)
        if verdict == 0:
            events.append(_burn_all(account, block.timestamp_s, "validity failure"))
            events.append(account._transition(BondState.DIVESTED, block.timestamp_s))
            return events
        if mined > n:
            oldest = next(d for d in account.deposits if not d.reconciled)
            f = reconcile_amount(block.report_hps, commitment_now, oldest.amount)
            oldest.reconciled = True
            account.total_reconciled += f
            account.total_slashed += oldest.amount - f
            block.reconciliation_coins = f
            events.append(
                Event(
                    "reconcile",
                    account.miner_id,
                    block.timestamp_s,
                    height=oldest.height,
                    amount=f,
                )
            )
    return events


def divest(account: MinerAccount, net: NetworkParams) -> list[Event]:
    """Voluntary exit: settle every remaining deposit after one final test.

    A passing final window pays each deposit out by its own recorded
    report/commitment pair; a failing one burns the lot. Either way the
    account ends Divested and must bootstrap again to mine.
    """
    if account.state is not BondState.FULLY_BONDED:
        raise ProtocolViolationError(
            f"{account.miner_id} cannot divest while {account.state.value}"
        )
    now = account.blocks[-1].timestamp_s if account.blocks else 0.0
    events: list[Event] = []
    verdict = valid(account.intervals(), account.params)
    if verdict == 0:
        events.append(_burn_all(account, now, "validity failure at divestment"))
    else:
        for dep in account.deposits:
            if dep.reconciled:
                continue
            f = reconcile_amount(dep.report_hps, dep.commitment_hps, dep.amount)
            dep.reconciled = True
            account.total_reconciled += f
            account.total_slashed += dep.amount - f
            events.append(
                Event("divest", account.miner_id, now, height=dep.height, amount=f)
            )
    events.append(account._transition(BondState.DIVESTED, now))
    return events


def assert_conservation(account: MinerAccount) -> None:
    """Coins in equal coins out plus coins still locked, to the last bit
    of float resolution."""
    locked = account.locked_bond
    lhs = account.total_deposited
    rhs = account.total_reconciled + account.total_slashed + locked
    if abs(lhs - rhs) > 1e-9 * max(1.0, abs(lhs)):
        raise InternalInvariantError(
            f"conservation violated for {account.miner_id}: "
            f"deposited {lhs} != reconciled {account.total_reconciled} "
            f"+ slashed {account.total_slashed} + locked {locked}"
        )


def write_event_log(path, events) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_event_log(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
