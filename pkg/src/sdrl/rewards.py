"""Per-member rewards for a sampled group."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trajectory import SampleGroup, extract_answer

MODES = ("gt-supervised", "self-supervised")


@dataclass(frozen=True)
class RewardConfig:
    gamma1: float = 1.0
    gamma2: float = 1.0
    format_weight: float = 0.5
    mode: str = "self-supervised"

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0 or self.format_weight < 0:
            raise ValueError("reward scales must be nonnegative")
        if self.gamma1 + self.gamma2 <= 0:
            raise ValueError("gamma1 + gamma2 must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown reward mode {self.mode!r}")


@dataclass(frozen=True)
class GroupRewards:
    r_correct: np.ndarray
    r_format: np.ndarray
    r_base: np.ndarray
    r_aug: np.ndarray
    accuracy: float


def correctness(group: SampleGroup, gt_answer: int) -> np.ndarray:
    if gt_answer not in group.vocab.choice_ids:
        raise ValueError("ground-truth answer is not a choice token")
    return np.array([extract_answer(t) == gt_answer for t in group], dtype=np.float64)


def format_flags(group: SampleGroup) -> np.ndarray:
    return np.array([t.parse_ok for t in group], dtype=np.float64)


def group_accuracy(flags: Sequence[float]) -> float:
    flags = np.asarray(flags, dtype=np.float64)
    if flags.size == 0:
        raise ValueError("empty group")
    return float(flags.sum() / flags.size)


def base_reward(correct, format_ok, cfg: RewardConfig):
    return np.asarray(correct, dtype=np.float64) + cfg.format_weight * np.asarray(format_ok, dtype=np.float64)


def augmented_reward(r_base, sim, cfg: RewardConfig):
    r_base = np.asarray(r_base, dtype=np.float64)
    if cfg.mode != "gt-supervised":
        return cfg.gamma1 * r_base
    return cfg.gamma1 * r_base + cfg.gamma2 * np.asarray(sim, dtype=np.float64)


def group_rewards(group: SampleGroup, gt_answer: int, cfg: RewardConfig, sims=None) -> GroupRewards:
    """``sims`` holds each member's summary similarity to the reference summary.

    It is only read in ``gt-supervised`` mode and may be ``None`` otherwise.
    """
    rc = correctness(group, gt_answer)
    rf = format_flags(group)
    rb = base_reward(rc, rf, cfg)
    if cfg.mode == "gt-supervised":
        if sims is None:
            raise ValueError("gt-supervised rewards need summary similarities")
        ra = augmented_reward(rb, sims, cfg)
    else:
        ra = augmented_reward(rb, 0.0, cfg)
    if not np.isfinite(ra).all():
        raise ValueError("non-finite reward")
    return GroupRewards(rc, rf, rb, ra, group_accuracy(rc))
