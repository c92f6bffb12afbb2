"""Central finite-difference check of the analytic objective gradient."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import policy as pol
from .objective import (AdvantageVector, GroupBatch, ObjectiveConfig, TokenWeightMatrix,
                        batch_contexts, total_objective_and_grad)

GradFn = Callable[[pol.Params, list, ObjectiveConfig], dict]


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    worst: dict
    per_layer: dict = field(default_factory=dict)
    n_checked: int = 0
    seconds: float = 0.0
    kl_coeffs: tuple = ()
    tol: float = 1e-4

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_rel_err": self.max_rel_err, "worst": self.worst,
                "per_layer": self.per_layer, "n_checked": self.n_checked,
                "seconds": round(self.seconds, 3), "kl_coeffs": list(self.kl_coeffs), "tol": self.tol}


def check_config() -> pol.PolicyConfig:
    """A tiny policy where every layer still has at least 20 entries."""
    return pol.PolicyConfig(vocab_size=24, choice_ids=(7, 8, 9, 10), d=4, d_h=20, k=5,
                            n_q=2, opt_len=2, video_len=4)


def random_problem(seed: int, kl_coeff: float, n_groups: int = 2, G: int = 3):
    """Random parameters, sequences, weights, advantages and old/ref probabilities.

    Old probabilities are the current ones scaled by random factors, kept away
    from the clip boundaries so the objective is smooth at the check point.
    Both clipped and unclipped tokens occur.
    """
    rng = np.random.default_rng(seed)
    cfg = check_config()
    arrays = {n: rng.normal(0.0, 0.5, s) for n, s in cfg.shapes().items()}
    params = pol.Params(cfg, arrays)
    ocfg = ObjectiveConfig(clip_eps=0.2, kl_coeff=kl_coeff, group_size=G)
    batch = []
    for b in range(n_groups):
        prompt = pol.PromptEncoding(tuple(int(x) for x in rng.integers(11, cfg.vocab_size, 3)),
                                    tuple(int(x) for x in rng.integers(11, cfg.vocab_size, 2)),
                                    tuple((int(x),) for x in rng.integers(11, cfg.vocab_size, 4)),
                                    ())
        seqs = [rng.integers(1, cfg.vocab_size, int(rng.integers(3, 7))) for _ in range(G)]
        W = TokenWeightMatrix(tuple(rng.uniform(0.0, 2.0, len(s)) for s in seqs))
        A = AdvantageVector(rng.normal(0.0, 1.0, G), 1e-4)
        batch.append(GroupBatch(b, prompt, seqs, W, A, []))
    ctx, toks = batch_contexts(cfg, batch)
    cur, _, _ = pol.token_probs(params, ctx, toks)
    ratio = np.empty(len(toks))
    for i in range(len(toks)):
        while True:
            r = float(np.exp(rng.normal(0.0, 0.3)))
            if min(abs(r - 0.8), abs(r - 1.2)) > 0.02:
                break
        ratio[i] = r
    old = cur / ratio
    ref = cur * np.exp(rng.normal(0.0, 0.3, len(toks)))
    off = 0
    for gb in batch:
        gb.old_probs, gb.ref_probs = [], []
        for s in gb.seqs:
            gb.old_probs.append(old[off:off + len(s)])
            gb.ref_probs.append(ref[off:off + len(s)])
            off += len(s)
    return params, batch, ocfg, (ctx, toks)


def analytic_grad(params, batch, ocfg, contexts=None) -> dict:
    return total_objective_and_grad(params, batch, ocfg, contexts=contexts).grads


def _value(params, batch, ocfg, contexts):
    return total_objective_and_grad(params, batch, ocfg, contexts=contexts, need_grad=False).J_total


def _indices(rng, params, name, n, ctx):
    a = params[name]
    if name == "E":
        # only rows read by some context carry gradient
        rows = np.unique(np.concatenate([ctx.win.ravel(), ctx.question.ravel()]))
        pool = [(int(r), j) for r in rows for j in range(a.shape[1])]
        pick = rng.choice(len(pool), min(n, len(pool)), replace=False)
        return [pool[i] for i in pick]
    flat = rng.choice(a.size, min(n, a.size), replace=False)
    return [np.unravel_index(int(i), a.shape) for i in flat]


def grad_check(seed: int = 0, kl_coeffs: Sequence[float] = (0.0, 0.04), per_layer: int = 24,
               h: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6,
               grad_fn: GradFn | None = None) -> GradCheckReport:
    """Compare ``grad_fn`` (the analytic gradient by default) against
    central differences of ``J_total`` on random problems.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    t0 = time.time()
    grad_fn = grad_fn or analytic_grad
    worst = {"rel_err": 0.0}
    layers = {}
    n_checked = 0
    for ci, kl_c in enumerate(kl_coeffs):
        params, batch, ocfg, contexts = random_problem(seed * 1000 + ci, kl_c)
        g = grad_fn(params, batch, ocfg)
        rng = np.random.default_rng(seed * 1000 + ci + 500)
        for name in pol.LAYERS:
            arr = params.arrays[name]
            for idx in _indices(rng, params, name, per_layer, contexts[0]):
                old = arr[idx]
                arr[idx] = old + h
                up = _value(params, batch, ocfg, contexts)
                arr[idx] = old - h
                dn = _value(params, batch, ocfg, contexts)
                arr[idx] = old
                num = (up - dn) / (2 * h)
                ana = float(g[name][idx])
                rel = abs(ana - num) / max(abs(ana), abs(num), floor)
                n_checked += 1
                layers[name] = max(layers.get(name, 0.0), rel)
                if rel >= worst["rel_err"]:
                    worst = {"rel_err": rel, "layer": name, "index": [int(i) for i in np.atleast_1d(idx)],
                             "kl_coeff": kl_c, "analytic": ana, "numeric": num}
    max_err = worst["rel_err"]
    return GradCheckReport(max_err < tol, max_err, worst, layers, n_checked, time.time() - t0,
                           tuple(kl_coeffs), tol)


def sign_flip(layer: str = "W1") -> GradFn:
    """Negative control: the analytic gradient with one layer's sign flipped."""
    def fn(params, batch, ocfg):
        g = dict(analytic_grad(params, batch, ocfg))
        g[layer] = -g[layer]
        return g
    return fn
