"""Group-relative clipped surrogate with token-wise weights.

Per-token weights, advantages, anchors and entropies are constants of the
step. Gradients flow only through the current policy's token probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import policy as pol
from .cvk import SummaryWeights
from .dvr import DiversityWeights, reasoning_positions
from .trajectory import SampleGroup


@dataclass(frozen=True)
class ObjectiveConfig:
    clip_eps: float = 0.2
    kl_coeff: float = 0.04
    group_size: int = 8
    eps_std: float = 1e-4

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coeff < 0 or self.eps_std < 0:
            raise ValueError("kl_coeff and eps_std must be nonnegative")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    eps_std: float


@dataclass(frozen=True)
class TokenWeightMatrix:
    rows: tuple[np.ndarray, ...]

    def __post_init__(self):
        for r in self.rows:
            if not np.isfinite(r).all() or (r < 0).any():
                raise ValueError("token weights must be finite and nonnegative")

    def scaled(self, c: float) -> TokenWeightMatrix:
        return TokenWeightMatrix(tuple(r * c for r in self.rows))


def advantages(r_aug, eps_std: float = 1e-4) -> AdvantageVector:
    r = np.asarray(r_aug, dtype=np.float64)
    if r.size < 2:
        raise ValueError("need at least two rewards")
    std = r.std()
    if std == 0:
        return AdvantageVector(np.zeros_like(r), eps_std)
    return AdvantageVector((r - r.mean()) / (std + eps_std), eps_std)


def assemble_weights(summary_w: SummaryWeights | None, diversity_w: DiversityWeights | None,
                     group: SampleGroup, dynamic: bool = True) -> TokenWeightMatrix:
    """Summary weights on summary spans, diversity weights on think and
    answer spans, 1 everywhere else (tags, failed parses)."""
    rows = []
    for g, traj in enumerate(group):
        w = np.ones(len(traj))
        if traj.parse_ok:
            s, e = traj.summary_span
            if summary_w is not None:
                w[s:e] = summary_w.for_member(e - s)
            if diversity_w is not None:
                vals = diversity_w.dynamic[g] if dynamic else diversity_w.base[g]
                w[reasoning_positions(traj)] = vals
        rows.append(w)
    return TokenWeightMatrix(tuple(rows))


def _check_probs(p, what):
    if (np.asarray(p) <= 0).any():
        raise ValueError(f"{what} probabilities must be strictly positive")


def clipped_terms(ratio, adv, weight, clip_eps):
    """Per-token ``W * min(r A, clip(r) A)`` and the mask where the clip binds."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    active = clipped < unclipped
    return weight * np.minimum(unclipped, clipped), active


def surrogate(old_probs: Sequence[np.ndarray], new_probs: Sequence[np.ndarray], W: TokenWeightMatrix,
              A: AdvantageVector, cfg: ObjectiveConfig) -> float:
    """One group's weighted clipped surrogate: ``(1/G) sum_g sum_t``."""
    total = 0.0
    for g, (po, pn) in enumerate(zip(old_probs, new_probs)):
        _check_probs(po, "old")
        terms, _ = clipped_terms(np.asarray(pn) / np.asarray(po), A.values[g], W.rows[g], cfg.clip_eps)
        total += float(terms.sum())
    return total / len(old_probs)


def kl_estimator(new_probs, ref_probs) -> np.ndarray:
    rho = np.asarray(ref_probs) / np.asarray(new_probs)
    return rho - np.log(rho) - 1.0


def regularizer(new_probs, ref_probs, cfg: ObjectiveConfig) -> float:
    """``kl_coeff`` times the token mean of ``rho - ln rho - 1``, ``rho = ref/new``."""
    if cfg.kl_coeff == 0:
        return 0.0
    new = np.concatenate([np.ravel(p) for p in new_probs]) if isinstance(new_probs, (list, tuple)) else np.ravel(new_probs)
    ref = np.concatenate([np.ravel(p) for p in ref_probs]) if isinstance(ref_probs, (list, tuple)) else np.ravel(ref_probs)
    _check_probs(ref, "reference")
    if new.size == 0:
        return 0.0
    return cfg.kl_coeff * float(kl_estimator(new, ref).mean())


@dataclass
class GroupBatch:
    """Everything a group contributes to one update, frozen for the step."""
    group_id: object
    prompt: pol.PromptEncoding
    seqs: list
    weights: TokenWeightMatrix
    adv: AdvantageVector
    old_probs: list
    ref_probs: list | None = None


@dataclass
class ObjectiveResult:
    J_total: float
    surrogate: float
    reg: float
    grads: dict
    clip_frac: float
    n_tokens: int


class NonFiniteGradient(FloatingPointError):
    pass


def batch_contexts(cfg: pol.PolicyConfig, batch: Sequence[GroupBatch]):
    prompts, seqs = [], []
    for gb in batch:
        for s in gb.seqs:
            prompts.append(gb.prompt)
            seqs.append(s)
    return pol.teacher_contexts(cfg, prompts, seqs)


def total_objective_and_grad(params: pol.Params, batch: Sequence[GroupBatch], cfg: ObjectiveConfig,
                             contexts=None, need_grad: bool = True) -> ObjectiveResult:
    """``J_total = mean_groups J_grpo - J_reg`` and its gradient.

    ``contexts`` may carry precomputed teacher-forcing contexts for the batch.
    """
    ctx, toks = contexts if contexts is not None else batch_contexts(params.cfg, batch)
    new_all, _, cache = pol.token_probs(params, ctx, toks)
    n_groups = len(batch)
    coef = np.zeros(len(toks))
    surr = 0.0
    n_clip = 0
    off = 0
    slices = []
    for gb in batch:
        G = len(gb.seqs)
        group_total = 0.0
        for g, s in enumerate(gb.seqs):
            T = len(s)
            sl = slice(off, off + T)
            po = np.asarray(gb.old_probs[g], dtype=np.float64)
            _check_probs(po, "old")
            r = new_all[sl] / po
            a = gb.adv.values[g]
            w = gb.weights.rows[g]
            terms, active = clipped_terms(r, a, w, cfg.clip_eps)
            group_total += float(terms.sum())
            n_clip += int(active.sum())
            coef[sl] = np.where(active, 0.0, w * a * r) / (G * n_groups)
            off += T
        slices.append((gb.group_id, off))
        surr += group_total / G
    surr /= n_groups
    reg = 0.0
    if cfg.kl_coeff > 0:
        ref_all = np.concatenate([np.asarray(p, dtype=np.float64) for gb in batch for p in gb.ref_probs])
        _check_probs(ref_all, "reference")
        rho = ref_all / new_all
        reg = cfg.kl_coeff * float((rho - np.log(rho) - 1.0).mean())
        coef = coef + cfg.kl_coeff * (rho - 1.0) / len(toks)
    grads = pol.backward(params, cache, toks, coef) if need_grad else {}
    if need_grad and not all(np.isfinite(g).all() for g in grads.values()):
        start = 0
        for gid, end in slices:
            if not np.isfinite(coef[start:end]).all() or not np.isfinite(new_all[start:end]).all():
                raise NonFiniteGradient(f"non-finite gradient from group {gid!r}")
            start = end
        raise NonFiniteGradient("non-finite gradient")
    n = max(len(toks), 1)
    return ObjectiveResult(surr - reg, surr, reg, grads, n_clip / n, len(toks))
