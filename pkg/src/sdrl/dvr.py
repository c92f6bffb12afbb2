"""Entropy-driven diversity weights for the reasoning part of each member.

Weights cover the think and answer spans, the positions the token-weight
matrix assigns them to. Their scores share one normalisation pool.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cvk import RANGE_TOL, kl
from .trajectory import SampleGroup

REASONING = ("think", "answer")


@dataclass(frozen=True)
class DiversityWeights:
    base: tuple[np.ndarray, ...]       # per member, aligned to reasoning_positions
    dynamic: tuple[np.ndarray, ...]
    scores: tuple[np.ndarray, ...]
    lambda_prime: float
    accuracy: float


def token_entropy(p) -> np.ndarray:
    """Natural-log entropy along the last axis, 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return np.maximum(-(p * np.log(safe)).sum(-1), 0.0)


def reasoning_positions(traj) -> np.ndarray:
    if not traj.parse_ok:
        return np.zeros(0, dtype=int)
    (ts, te), (as_, ae) = traj.think_span, traj.answer_span
    return np.concatenate([np.arange(ts, te), np.arange(as_, ae)]).astype(int)


def _kl_scores(group: SampleGroup):
    # KL of each member's distribution to the group mean at the same
    # segment offset, over members that reach it.
    out = []
    means = {}
    for name in REASONING:
        rows = [t.segment_dists(name) for t in group if t.parse_ok]
        n = max((len(r) for r in rows), default=0)
        acc, cnt = np.zeros((n, group.vocab.size)), np.zeros(n)
        for r in rows:
            acc[:len(r)] += r
            cnt[:len(r)] += 1
        means[name] = acc / np.maximum(cnt, 1)[:, None]
    for t in group:
        if not t.parse_ok:
            out.append(np.zeros(0))
            continue
        parts = [np.abs(kl(t.segment_dists(n), means[n][:len(t.segment_dists(n))])) for n in REASONING]
        out.append(np.concatenate(parts))
    return out


def diversity_weights(group: SampleGroup, accuracy: float, lambda_prime: float = 0.7,
                      metric: str = "entropy") -> DiversityWeights:
    if not 0 <= accuracy <= 1:
        raise ValueError("accuracy must lie in [0, 1]")
    if lambda_prime < 0:
        raise ValueError("lambda_prime must be nonnegative")
    if metric == "entropy":
        scores = [token_entropy(t.dists[reasoning_positions(t)]) for t in group]
    elif metric == "kl":
        scores = _kl_scores(group)
    else:
        raise ValueError(f"unknown diversity metric {metric!r}")
    pool = np.concatenate(scores) if scores else np.zeros(0)
    if pool.size and pool.max() - pool.min() > RANGE_TOL:
        lo, hi = pool.min(), pool.max()
        base = [np.clip(1.0 + lambda_prime * (h - lo) / (hi - lo), 1.0, 1.0 + lambda_prime)
                for h in scores]
    else:
        base = [np.ones_like(h) for h in scores]
    dyn = [b * (1.0 - accuracy) for b in base]
    return DiversityWeights(tuple(base), tuple(dyn), tuple(scores), lambda_prime, accuracy)
