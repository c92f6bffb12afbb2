"""Training loop: format warm-up, then group-relative updates with SDRL weights."""
from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import policy as pol
from .config import RunConfig
from .cvk import compute_anchor, kl_dispersion, summary_weights
from .dvr import diversity_weights, reasoning_positions
from .env import Episode, Vocabulary, evaluate
from .metrics import EmbeddingProvider, composite_sim
from .objective import GroupBatch, advantages, assemble_weights, batch_contexts, total_objective_and_grad
from .rewards import group_rewards
from .trajectory import SampleGroup


def make_provider(cfg: RunConfig) -> EmbeddingProvider:
    return EmbeddingProvider(cfg.embed_mode, cfg.ngram_order, cfg.embed_url or None)


def policy_config(cfg: RunConfig, vocab: Vocabulary, episodes: Sequence[Episode]) -> pol.PolicyConfig:
    video_len = max((len(e.prompt.video) for e in episodes), default=1)
    n_q = max((len(e.prompt.question) for e in episodes), default=1)
    opt_len = max((len(o) for e in episodes for o in e.prompt.options), default=1)
    return pol.PolicyConfig(vocab.size, vocab.spec.choice_ids, cfg.d, cfg.d_h, cfg.k,
                            n_q=max(n_q, 1), opt_len=max(opt_len, 1), video_len=max(video_len, 1))


@dataclass
class GroupInfo:
    rewards: object
    weights: object
    adv: object
    D: np.ndarray | None
    omega_s: np.ndarray | None
    diversity: object


def group_weights(group: SampleGroup, ep: Episode, cfg: RunConfig, provider=None) -> GroupInfo:
    """Rewards, token weights and advantages for one sampled group."""
    rc = cfg.reward
    sims = None
    if cfg.mode == "gt-supervised":
        sims = np.zeros(group.G)
        if cfg.cvk_on:
            sims = np.array([composite_sim(t.segment_tokens("summary"), ep.gt_summary, cfg.sim_weights,
                                           provider, cfg.bleu_max_n) for t in group])
    rw = group_rewards(group, ep.gt_answer, rc, sims)
    sw, D = None, None
    if cfg.cvk_on and cfg.mode == "self-supervised":
        anchor = compute_anchor(group, rw.r_correct)
        if anchor is not None and anchor.length:
            D = kl_dispersion(group, anchor)
            sw = summary_weights(D, cfg.lam)
    div = diversity_weights(group, rw.accuracy, cfg.lam_prime, cfg.metric) if cfg.dvr_on else None
    W = assemble_weights(sw, div, group, dynamic=cfg.dynamic_on)
    A = advantages(rw.r_aug, cfg.eps_std)
    return GroupInfo(rw, W, A, D, None if sw is None else sw.weights, div)


def clip_grads(grads: dict, max_norm: float):
    gn = pol.grad_norm(grads)
    if max_norm > 0 and gn > max_norm:
        s = max_norm / gn
        grads = {n: g * s for n, g in grads.items()}
    return grads, gn


class Trainer:
    def __init__(self, cfg: RunConfig, vocab: Vocabulary, train_eps: Sequence[Episode],
                 val_eps: Sequence[Episode] = (), provider: EmbeddingProvider | None = None):
        if not train_eps:
            raise ValueError("no training episodes")
        self.cfg = cfg
        self.vocab = vocab
        self.train_eps = list(train_eps)
        self.val_eps = list(val_eps)
        self.provider = provider or make_provider(cfg)
        self.pcfg = policy_config(cfg, vocab, self.train_eps + self.val_eps)
        s_init, s_warm, s_step = np.random.SeedSequence(cfg.seed).spawn(3)
        self.params = pol.init_params(self.pcfg, int(s_init.generate_state(1)[0]))
        self.warm_rng = np.random.default_rng(s_warm)
        self.rng = np.random.default_rng(s_step)
        self.opt = (pol.SGDMomentum(cfg.lr, cfg.momentum) if cfg.optimizer == "sgd"
                    else pol.Adam(cfg.lr))
        self.ref = self.params.snapshot()
        self.step_count = 0
        self.meta = {}

    # warm-up ------------------------------------------------------------

    def warmup_batch(self):
        """Teacher-forcing rows for one batch of noisy format demonstrations.

        The summary copies the clip with random substitutions, the think span
        holds one random token, and the answer letter target is uniform over
        the episode's choices so the warm-up carries no answer preference.
        """
        v, rng, cfg = self.vocab, self.warm_rng, self.cfg
        s, se, t, te, a, ae = v.spec.tag_ids
        acts, thinks = v.action_ids, v.think_ids
        eps = [self.train_eps[i] for i in rng.integers(0, len(self.train_eps), cfg.warmup_batch)]
        seqs, letter_pos = [], []
        for ep in eps:
            summ = [x if rng.random() >= cfg.warmup_noise else acts[rng.integers(len(acts))]
                    for x in ep.prompt.video]
            mid = thinks[rng.integers(len(thinks))] if rng.random() < 0.5 else acts[rng.integers(len(acts))]
            letter = v.spec.choice_ids[rng.integers(ep.n_choices)]
            seq = [s, *summ, se, t, mid, te, a, letter, ae]
            seqs.append(seq)
            letter_pos.append(len(seq) - 2)
        ctx, toks = pol.teacher_contexts(self.pcfg, [e.prompt for e in eps], seqs)
        coef = np.full(len(toks), 1.0 / len(eps))
        keep = np.ones(len(toks), dtype=bool)
        extra_idx, extra_tok, extra_coef = [], [], []
        off = 0
        for ep, sq, lp in zip(eps, seqs, letter_pos):
            row = off + lp
            keep[row] = False
            for j in range(ep.n_choices):
                extra_idx.append(row)
                extra_tok.append(v.spec.choice_ids[j])
                extra_coef.append(1.0 / (len(eps) * ep.n_choices))
            off += len(sq)
        idx = np.concatenate([np.flatnonzero(keep), np.array(extra_idx, dtype=int)])
        toks = np.concatenate([toks[keep], np.array(extra_tok, dtype=np.int64)])
        coef = np.concatenate([coef[keep], np.array(extra_coef)])
        return ctx.take(idx), toks, coef

    def warmup(self):
        for _ in range(self.cfg.warmup_steps):
            ctx, toks, coef = self.warmup_batch()
            _, cache = pol.forward(self.params, ctx)
            grads = pol.backward(self.params, cache, toks, coef)
            # the pointer head stays at zero: grounding answers is left to RL
            grads["Wg"] = np.zeros_like(grads["Wg"])
            grads, _ = clip_grads(grads, self.cfg.max_grad_norm)
            self.opt.step(self.params, grads)
        self.opt.reset()
        self.ref = self.params.snapshot()

    # RL ------------------------------------------------------------------

    def sample_batch(self):
        """Draw prompts and roll out ``G`` samples each with the step RNG."""
        cfg = self.cfg
        idx = self.rng.integers(0, len(self.train_eps), cfg.batch_prompts)
        eps = [self.train_eps[i] for i in idx]
        gen, dists, alive = pol.rollout(self.params, [e.prompt for e in eps], cfg.G, cfg.max_len,
                                        self.rng, self.vocab.spec.answer_close)
        return eps, gen, dists, alive

    def build_groups(self, eps, gen, dists, alive):
        trajs = pol.trajectories_from_rollout(gen, dists, alive, self.vocab.spec)
        G = self.cfg.G
        return [SampleGroup(b, trajs[b * G:(b + 1) * G], self.vocab.spec) for b in range(len(eps))]

    def step(self) -> dict:
        cfg = self.cfg
        eps, gen, dists, alive = self.sample_batch()
        groups = self.build_groups(eps, gen, dists, alive)
        batch, infos = [], []
        for b, (ep, grp) in enumerate(zip(eps, groups)):
            info = group_weights(grp, ep, cfg, self.provider)
            infos.append(info)
            seqs = [np.asarray(t.tokens, dtype=np.int64) for t in grp]
            old = [t.dists[np.arange(len(t)), list(t.tokens)] for t in grp]
            batch.append(GroupBatch(b, ep.prompt, seqs, info.weights, info.adv, old))
        ctx = batch_contexts(self.pcfg, batch)
        if cfg.kl_coeff > 0:
            ref_p, _, _ = pol.token_probs(self.ref, ctx[0], ctx[1])
            off = 0
            for gb in batch:
                gb.ref_probs = []
                for s in gb.seqs:
                    gb.ref_probs.append(ref_p[off:off + len(s)])
                    off += len(s)
        for _ in range(cfg.inner_epochs):
            res = total_objective_and_grad(self.params, batch, cfg.objective, contexts=ctx)
            grads, gn = clip_grads(res.grads, cfg.max_grad_norm)
            self.opt.step(self.params, grads)
        self.step_count += 1
        return {
            "step": self.step_count,
            "J_total": res.J_total,
            "surrogate": res.surrogate,
            "reg": res.reg,
            "mean_reward": float(np.mean([i.rewards.r_aug.mean() for i in infos])),
            "mean_accuracy": float(np.mean([i.rewards.accuracy for i in infos])),
            "clip_frac": res.clip_frac,
            "grad_norm": gn,
        }

    def evaluate(self, limit: int | None = None):
        eps = self.val_eps if limit in (None, 0) else self.val_eps[:limit]
        return evaluate(self.params, eps, self.vocab, self.cfg.max_len, self.provider, self.cfg.bleu_max_n)

    def checkpoint_extra(self) -> dict:
        return {**self.meta, "vocab": self.vocab.to_json(), "step": self.step_count,
                "config": self.cfg.to_dict()}


class RunLock:
    """Exclusive lockfile for a run directory."""

    def __init__(self, path):
        self.path = os.path.join(path, ".lock")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"run directory is locked ({self.path})") from None
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.path)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def run_training(cfg: RunConfig, vocab: Vocabulary, train_eps, val_eps, out_dir, verbose: bool = False,
                 meta: dict | None = None):
    """Full run writing config, metrics, evaluations and checkpoints to ``out_dir``.

    ``meta`` is stored in every checkpoint next to the vocabulary and config.
    """
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    with RunLock(out_dir):
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            f.write(cfg.to_json() + "\n")
        tr = Trainer(cfg, vocab, train_eps, val_eps)
        tr.meta = dict(meta or {})
        tr.warmup()
        ck = os.path.join(out_dir, "checkpoints")

        def save():
            path = os.path.join(ck, f"step_{tr.step_count:05d}.json")
            pol.save_checkpoint(path, tr.params, tr.checkpoint_extra())
            return path

        final = save()
        evals = []

        def do_eval():
            if tr.val_eps:
                rep = tr.evaluate(cfg.eval_limit)
                evals.append({"step": tr.step_count, **rep})
                evf.write(_dumps(evals[-1]) + "\n")
                if verbose:
                    print(f"step {tr.step_count}: val acc {rep['accuracy']:.3f} parse {rep['parse_rate']:.3f}",
                          file=sys.stderr)

        t0 = time.time()
        with open(os.path.join(out_dir, "metrics.jsonl"), "w") as mf, \
                open(os.path.join(out_dir, "evals.jsonl"), "w") as evf:
            if cfg.eval_every:
                do_eval()
            for _ in range(cfg.steps):
                m = tr.step()
                mf.write(_dumps(m) + "\n")
                if cfg.checkpoint_every and tr.step_count % cfg.checkpoint_every == 0:
                    final = save()
                if cfg.eval_every and tr.step_count % cfg.eval_every == 0:
                    do_eval()
            if cfg.steps and (not cfg.checkpoint_every or cfg.steps % cfg.checkpoint_every):
                final = save()
            if cfg.steps and (not cfg.eval_every or cfg.steps % cfg.eval_every):
                do_eval()
        summary = {"final_checkpoint": os.path.relpath(final, out_dir), "steps": tr.step_count,
                   "final_eval": evals[-1] if evals else None}
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            f.write(_dumps(summary) + "\n")
        if verbose:
            print(f"trained {cfg.steps} steps in {time.time() - t0:.1f}s", file=sys.stderr)
        return tr, evals


def inspect_group(params: pol.Params, ep: Episode, cfg: RunConfig, vocab: Vocabulary, seed: int,
                  provider=None) -> dict:
    """Sample one group for ``ep`` and dump every quantity behind its token weights."""
    grp = pol.sample_group(params, ep.prompt, cfg.G, cfg.max_len, seed, vocab.spec, ep.record_ref)
    info = group_weights(grp, ep, cfg, provider or make_provider(cfg))
    members = []
    for g, t in enumerate(grp):
        m = {"tokens": list(t.tokens), "parse_ok": t.parse_ok,
             "spans": {n: list(t.span(n)) for n in ("summary", "think", "answer")},
             "correct": bool(info.rewards.r_correct[g]), "reward": float(info.rewards.r_aug[g]),
             "A": float(info.adv.values[g]), "W": info.weights.rows[g].tolist()}
        if info.diversity is not None:
            m["H"] = info.diversity.scores[g].tolist()
            m["omega_d_dyn"] = info.diversity.dynamic[g].tolist()
            m["reasoning_positions"] = reasoning_positions(t).tolist()
        members.append(m)
    return {"prompt_id": ep.record_ref, "seed": seed, "accuracy": info.rewards.accuracy,
            "D": None if info.D is None else info.D.tolist(),
            "omega_s": None if info.omega_s is None else info.omega_s.tolist(),
            "lam": cfg.lam, "lam_prime": cfg.lam_prime, "members": members}
