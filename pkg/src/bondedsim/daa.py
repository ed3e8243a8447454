"""Difficulty adjustment algorithms behind one small interface.

Two rules are provided. The commitment-based rule sets difficulty
directly from the pledged total hash rate, so with honest miners the
expected block time equals the target at every block, with no settling
transient. The reactive baseline is the 144-block rolling-window
retarget: project the window's summed work onto the target time, with
the window's time span clamped to [72T, 288T].

Difficulty is a real number of expected hashes per block throughout; no
integer target encoding.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

__all__ = [
    "CW_WINDOW",
    "DAA_KEYS",
    "DifficultyState",
    "bm_difficulty",
    "bch_difficulty",
    "warmup_window",
]

CW_WINDOW = 144

# Selection keys accepted in experiment configs.
DAA_KEYS = ("bm", "bch-cw144")


def bm_difficulty(total_commitment_hps: float, target_time_s: float) -> float:
    """Proactive rule: difficulty = committed total rate times target time."""
    if not total_commitment_hps > 0:
        raise ValueError("total commitment must be positive")
    if not target_time_s > 0:
        raise ValueError("target time must be positive")
    return total_commitment_hps * target_time_s


def bch_difficulty(window, target_time_s: float) -> float:
    """Rolling-window retarget over the last 144 (difficulty, block time) pairs.

    M = sum of block times, clamped to M' in [72T, 288T]; the next
    difficulty is T * (sum of difficulties) / M'. A window of identical
    (d, T) entries is a fixed point.
    """
    pairs = list(window)
    if len(pairs) != CW_WINDOW:
        raise ValueError(
            f"retarget window must hold exactly {CW_WINDOW} entries, got {len(pairs)}"
        )
    if not target_time_s > 0:
        raise ValueError("target time must be positive")
    sum_d = 0.0
    sum_t = 0.0
    for d, t in pairs:
        sum_d += d
        sum_t += t
    m_clamped = max(72.0 * target_time_s, min(sum_t, 288.0 * target_time_s))
    return target_time_s * sum_d / m_clamped


def warmup_window(difficulty: float, target_time_s: float):
    """Seed window for a chain starting in steady state: the genesis
    difficulty and target time replicated across all 144 slots."""
    return [(difficulty, target_time_s)] * CW_WINDOW


@dataclass
class DifficultyState:
    """Current difficulty plus the rolling window the baseline rule needs."""

    difficulty: float
    window: deque = field(default_factory=lambda: deque(maxlen=CW_WINDOW))

    def __post_init__(self):
        if not self.difficulty > 0:
            raise ValueError("difficulty must be positive")
        self.window = deque(self.window, maxlen=CW_WINDOW)

    def push(self, difficulty: float, block_time_s: float) -> None:
        self.window.append((difficulty, block_time_s))
