from __future__ import annotations

import numpy as np
import pytest

from conftest import ANS, B, C, EANS, SUM, make_group, well_formed
from sdrl.rewards import (RewardConfig, augmented_reward, base_reward, correctness, format_flags, group_accuracy,
                          group_rewards)


def test_correctness_flags(vocab):
    right = well_formed([11], [12], [B])
    wrong = well_formed([11], [12], [C])
    assert correctness(make_group(vocab, [right] * 4), B).tolist() == [1, 1, 1, 1]
    broken = [SUM, 11, ANS, B, EANS]
    assert correctness(make_group(vocab, [broken, right]), B).tolist() == [0, 1]
    g = make_group(vocab, [right, right] + [wrong] * 6)
    assert correctness(g, B).sum() == 2
    with pytest.raises(ValueError):
        correctness(g, 12)


def test_accuracy():
    assert group_accuracy([1, 1, 1, 1]) == 1.0
    assert group_accuracy([0, 0, 0, 0]) == 0.0
    assert group_accuracy([1, 1, 0, 0, 0, 0, 0, 0]) == 0.25


def test_base_and_augmented():
    cfg = RewardConfig(mode="gt-supervised")
    assert (cfg.gamma1, cfg.gamma2) == (1.0, 1.0)
    assert base_reward(1, 1, cfg) == 1.5
    assert base_reward(0, 0, cfg) == 0.0
    assert base_reward(0, 1, cfg) == 0.5
    assert augmented_reward(1.0, 0.71, cfg) == pytest.approx(1.71)
    assert augmented_reward(1.0, 0.0, cfg) == 1.0
    selfcfg = RewardConfig(gamma1=2.0)
    assert augmented_reward(1.0, 0.9, selfcfg) == 2.0


def test_group_rewards_modes(vocab):
    g = make_group(vocab, [well_formed([11], [12], [B]), well_formed([11], [12], [C]), [SUM, 11, EANS]])
    r = group_rewards(g, B, RewardConfig())
    assert r.r_base.tolist() == [1.5, 0.5, 0.0]
    assert r.r_aug.tolist() == [1.5, 0.5, 0.0]
    assert r.accuracy == pytest.approx(1 / 3)
    gt = group_rewards(g, B, RewardConfig(mode="gt-supervised"), np.array([0.5, 0.2, 0.0]))
    assert gt.r_aug.tolist() == pytest.approx([2.0, 0.7, 0.0])
    with pytest.raises(ValueError):
        group_rewards(g, B, RewardConfig(mode="gt-supervised"))
    assert format_flags(g).tolist() == [1, 1, 0]


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(gamma1=-1)
    with pytest.raises(ValueError):
        RewardConfig(gamma1=0, gamma2=0)
    with pytest.raises(ValueError):
        RewardConfig(mode="other")
