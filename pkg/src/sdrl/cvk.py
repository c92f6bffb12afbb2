"""Summary consistency weights from a group's correct members.

Each summary position gets a weight that shrinks with how far the group's
token distributions spread around the anchor built from correct members.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory import SampleGroup

Q_FLOOR = 1e-12
# spreads this small are rounding noise, not disagreement
RANGE_TOL = 1e-12


@dataclass(frozen=True)
class ConsistencyAnchor:
    dists: np.ndarray          # (L, V)
    contributor_count: int
    used_fallback: bool = False

    @property
    def length(self) -> int:
        return int(self.dists.shape[0])


@dataclass(frozen=True)
class SummaryWeights:
    weights: np.ndarray
    lam: float

    def for_member(self, n: int) -> np.ndarray:
        """Weights for a summary of length ``n``; unaligned positions get 1."""
        out = np.ones(n)
        m = min(n, self.weights.size)
        out[:m] = self.weights[:m]
        return out


def _summaries(group: SampleGroup):
    return [t.segment_dists("summary") if t.parse_ok else np.zeros((0, group.vocab.size))
            for t in group]


def compute_anchor(group: SampleGroup, flags) -> ConsistencyAnchor | None:
    """Position-wise mean of correct members' summary distributions.

    With no correct member the mean runs over every member that produced a
    summary. Returns ``None`` when no member has one.
    """
    flags = np.asarray(flags, dtype=bool)
    if group.G == 0 or flags.size != group.G:
        raise ValueError("flags must match a nonempty group")
    summ = _summaries(group)
    idx = [g for g in range(group.G) if flags[g] and len(summ[g])]
    fallback = not idx
    if fallback:
        idx = [g for g in range(group.G) if len(summ[g])]
    if not idx:
        return None
    L = min(len(summ[g]) for g in idx)
    acc = np.zeros((L, group.vocab.size))
    for g in sorted(idx):
        acc += summ[g][:L]
    return ConsistencyAnchor(acc / len(idx), len(idx), fallback)


def kl(p, q) -> np.ndarray:
    """Row-wise KL(p || q) with 0 log 0 = 0 and q floored."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), Q_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(-1)


def kl_dispersion(group: SampleGroup, anchor: ConsistencyAnchor) -> np.ndarray:
    """Mean KL of member summaries to the anchor at each aligned position.

    A member only enters the mean at positions its summary actually reaches.
    ``np.abs`` guards against the tiny negative values rounding can leave.
    """
    if anchor.length < 1:
        raise ValueError("anchor is empty")
    total = np.zeros(anchor.length)
    count = np.zeros(anchor.length)
    for s in _summaries(group):
        m = min(len(s), anchor.length)
        if m:
            total[:m] += np.abs(kl(s[:m], anchor.dists[:m]))
            count[:m] += 1
    return total / np.maximum(count, 1)


def summary_weights(D, lam: float = 0.5) -> SummaryWeights:
    D = np.asarray(D, dtype=np.float64)
    if D.size == 0 or not np.isfinite(D).all() or (D < 0).any():
        raise ValueError("dispersion must be a nonempty, finite, nonnegative vector")
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    lo, hi = D.min(), D.max()
    if hi - lo <= RANGE_TOL:
        return SummaryWeights(np.ones_like(D), lam)
    w = 1.0 - lam * (D - lo) / (hi - lo)
    return SummaryWeights(np.clip(w, 1.0 - lam, 1.0), lam)
