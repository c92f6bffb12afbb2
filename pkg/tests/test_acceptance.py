"""End-to-end acceptance checks.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion. The toy training runs are shared between
criteria 6 to 8 through a module fixture (six runs, a few minutes on one core).
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import hand_videos, make_group
from oracles import oracle_letter
from sdrl import eventflow as ef
from sdrl import policy as pol
from sdrl.cli import main
from sdrl.cvk import compute_anchor, kl_dispersion, summary_weights
from sdrl.dvr import diversity_weights
from sdrl.env import composite_from_report
from sdrl.gradcheck import grad_check
from sdrl.rewards import correctness, group_accuracy
from sdrl.toy import toy_config, toy_episodes
from sdrl.trajectory import VocabSpec, extract_answer, segment
from sdrl.train import Trainer

SEEDS = (0, 1, 2)
TAGS = (1, 2, 3, 4, 5, 6)
LETTERS = (7, 8, 9, 10)
SPEC = VocabSpec(16, TAGS, LETTERS)


def _sparse_dists(rng, T, support, sharp):
    """Distributions over the full id range that live on ``support`` only."""
    out = np.zeros((T, SPEC.size))
    x = rng.gamma(sharp, 1.0, (T, len(support))) + 1e-12
    out[:, support] = x / x.sum(1, keepdims=True)
    return out


def _random_group(rng, G, V, correct_mask=None):
    support = rng.choice(SPEC.size, V, replace=False)
    seqs, dists = [], []
    for g in range(G):
        summ = list(rng.integers(11, 16, rng.integers(1, 5)))
        think = list(rng.integers(11, 16, rng.integers(1, 4)))
        if correct_mask is None:
            ans = [int(rng.choice(LETTERS))]
        else:
            ans = [LETTERS[0] if correct_mask[g] else LETTERS[1]]
        s = [1, *summ, 2, 3, *think, 4, 5, *ans, 6]
        if rng.random() < 0.1:
            s = s[1:]  # failed parse
        seqs.append(s)
        dists.append(_sparse_dists(rng, len(s), support, rng.choice([0.3, 1.0, 3.0])))
    return make_group(SPEC, seqs, dists=dists), support


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1, "finite-difference gradient check, kl_coeff in {0, 0.04}, rel err <= 1e-4, < 30 s")
def test_c1_gradient_check():
    t0 = time.perf_counter()
    rep = grad_check(seed=0, kl_coeffs=(0.0, 0.04), tol=1e-4)
    elapsed = time.perf_counter() - t0
    assert rep.passed, rep.worst
    assert rep.max_rel_err <= 1e-4
    assert set(rep.kl_coeffs) == {0.0, 0.04}
    assert elapsed < 30


# ---------------------------------------------------------------- 2

@pytest.mark.criterion(2, "1000 random groups: weight ranges, solved groups zero, degenerate groups one")
def test_c2_weight_ranges():
    rng = np.random.default_rng(2024)
    solved = degenerate = 0
    for i in range(1000):
        G = int(rng.choice([2, 4, 8]))
        V = int(rng.integers(2, 9))
        lam, lp = float(rng.uniform(0, 1)), float(rng.uniform(0, 2))
        mask = np.ones(G, bool) if i % 10 == 0 else None
        grp, support = _random_group(rng, G, V, mask)
        if i % 10 == 0:
            # all correct: force a parse for every member
            grp = make_group(SPEC, [[1, 11, 2, 3, 12, 4, 5, LETTERS[0], 6]] * G,
                             dists=[_sparse_dists(rng, 9, support, 1.0) for _ in range(G)])
        flags = correctness(grp, LETTERS[0])
        acc = group_accuracy(flags)
        anchor = compute_anchor(grp, flags)
        if anchor is not None:
            w = summary_weights(kl_dispersion(grp, anchor), lam).weights
            assert (w >= 1 - lam - 1e-12).all() and (w <= 1 + 1e-12).all()
        div = diversity_weights(grp, acc, lp)
        for b, d in zip(div.base, div.dynamic):
            assert (b >= 1 - 1e-12).all() and (b <= 1 + lp + 1e-12).all()
            assert (d >= (1 - acc) - 1e-12).all() and (d <= (1 - acc) * (1 + lp) + 1e-12).all()
            if acc == 1:
                assert (d == 0).all()
        solved += acc == 1

        # degenerate: identical members give constant dispersion and entropy
        one = grp.trajectories[0]
        if one.parse_ok:
            same = make_group(SPEC, [list(one.tokens)] * G, dists=[one.dists] * G)
            f2 = correctness(same, LETTERS[0])
            a2 = compute_anchor(same, f2)
            assert (summary_weights(kl_dispersion(same, a2), lam).weights == 1).all()
            flat = make_group(SPEC, [list(one.tokens)] * G,
                              dists=[np.tile(one.dists[:1], (len(one), 1))] * G)
            d3 = diversity_weights(flat, group_accuracy(f2), lp)
            assert all((b == 1).all() for b in d3.base)
            degenerate += 1
    assert solved >= 100 and degenerate >= 500


# ---------------------------------------------------------------- 3

def _kl_sum(P, Q):
    """``sum_g sum_t KL(P[g, t] || Q[..., t])`` for a batch of candidates Q."""
    mask = P > 0
    logp = np.log(np.where(mask, P, 1.0))
    out = np.zeros(Q.shape[0])
    for g in range(P.shape[0]):
        out += np.where(mask[g], P[g] * (logp[g] - np.log(np.maximum(Q, 1e-300))), 0.0).sum((-1, -2))
    return out


@pytest.mark.criterion(3, "anchor minimizes summed KL over 10,000 random candidates, 200 groups, tol 1e-9")
def test_c3_anchor_is_kl_minimizer():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 200:
        G = int(rng.choice([2, 4, 8]))
        V = int(rng.integers(2, 6))
        grp, support = _random_group(rng, G, V)
        flags = correctness(grp, LETTERS[0])
        anchor = compute_anchor(grp, flags)
        if anchor is None:
            continue
        members = [g for g in range(G) if grp.trajectories[g].parse_ok
                   and (flags[g] or anchor.used_fallback)]
        L = anchor.length
        P = np.stack([grp.trajectories[g].segment_dists("summary")[:L][:, support] for g in members])
        q_star = anchor.dists[:, support]
        far = rng.dirichlet(np.ones(V), (5000, L))
        # half the candidates sit close to the anchor
        near = q_star[None] * np.exp(rng.normal(0, 0.05, (5000, L, V)))
        near /= near.sum(-1, keepdims=True)
        Q = np.concatenate([far, near])
        best = _kl_sum(P, q_star[None])[0]
        assert best <= _kl_sum(P, Q).min() + 1e-9
        checked += 1


# ---------------------------------------------------------------- 4

def reference_grpo_step(tr: Trainer) -> dict:
    """Plain clipped GRPO with unit token weights, built from policy primitives."""
    cfg, spec = tr.cfg, tr.vocab.spec
    eps, gen, dists, alive = tr.sample_batch()
    G, B = cfg.G, len(eps)
    prompts, seqs, olds, advs, group_r, group_acc = [], [], [], [], [], []
    for b, ep in enumerate(eps):
        correct, fmt = [], []
        for i in range(b * G, (b + 1) * G):
            T = int(alive[i].sum())
            toks = gen[i, :T].astype(np.int64)
            traj = segment(toks, spec)
            correct.append(float(extract_answer(traj) == ep.gt_answer))
            fmt.append(float(traj.parse_ok))
            prompts.append(ep.prompt)
            seqs.append(toks)
            olds.append(dists[i, np.arange(T), toks])
        r = cfg.gamma1 * (np.array(correct) + cfg.format_weight * np.array(fmt))
        sd = r.std()
        advs.extend(np.zeros(G) if sd == 0 else (r - r.mean()) / (sd + cfg.eps_std))
        group_r.append(r.mean())
        group_acc.append(sum(correct) / G)
    ctx, toks = pol.teacher_contexts(tr.pcfg, prompts, seqs)
    p, cache = pol.forward(tr.params, ctx)
    new = p[np.arange(len(toks)), toks]

    coef = np.zeros(len(toks))
    surr, n_clip, off = 0.0, 0, 0
    for b in range(B):
        total = 0.0
        for i in range(b * G, (b + 1) * G):
            sl = slice(off, off + len(seqs[i]))
            ratio = new[sl] / olds[i]
            a = advs[i]
            plain = ratio * a
            clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * a
            active = clipped < plain
            total += float(np.minimum(plain, clipped).sum())
            n_clip += int(active.sum())
            coef[sl] = np.where(active, 0.0, a * ratio) / (G * B)
            off = sl.stop
        surr += total / G
    surr /= B
    reg = 0.0
    if cfg.kl_coeff > 0:
        ref = tr.ref
        pr, _ = pol.forward(ref, ctx)
        rho = pr[np.arange(len(toks)), toks] / new
        reg = cfg.kl_coeff * float((rho - np.log(rho) - 1.0).mean())
        coef = coef + cfg.kl_coeff * (rho - 1.0) / len(toks)
    grads = pol.backward(tr.params, cache, toks, coef)
    gn = pol.grad_norm(grads)
    if cfg.max_grad_norm > 0 and gn > cfg.max_grad_norm:
        grads = {k: g * (cfg.max_grad_norm / gn) for k, g in grads.items()}
    tr.opt.step(tr.params, grads)
    tr.step_count += 1
    return {"step": tr.step_count, "J_total": surr - reg, "surrogate": surr, "reg": reg,
            "mean_reward": float(np.mean(group_r)), "mean_accuracy": float(np.mean(group_acc)),
            "clip_frac": n_clip / len(toks), "grad_norm": gn}


@pytest.fixture(scope="module")
def toy():
    cfg = toy_config()
    return toy_episodes(cfg)


@pytest.mark.criterion(4, "with CVK and DVR off and gamma2 = 0, 50 steps match a reference GRPO bit for bit")
def test_c4_plain_grpo_matches_reference(toy):
    vocab, train, val = toy
    cfg = toy_config(seed=5).plain_grpo()
    ours, ref = Trainer(cfg, vocab, train), Trainer(cfg, vocab, train)
    ours.warmup()
    ref.warmup()
    for _ in range(50):
        assert ours.step() == reference_grpo_step(ref)
    for name in ours.params.arrays:
        np.testing.assert_array_equal(ours.params[name], ref.params[name])


# ---------------------------------------------------------------- 5

@pytest.mark.criterion(5, ">= 500 records over all 15 families agree with an independent oracle")
def test_c5_dataset_oracle_agreement():
    videos = hand_videos()
    by = {v.video_id: v for v in videos}
    lines, manifest = ef.generate_dataset(videos, {n: 40 for n in ef.FAMILY_NAMES}, seed=11, clip_len=4)
    assert len(lines) >= 500
    assert {ln["record"]["category"] for ln in lines} >= {ef.FAMILIES[n].category for n in ef.FAMILY_NAMES}
    assert sum(1 for c in manifest["counts"].values() if c > 0) == 15
    for ln in lines:
        ef.validate_record(ln["record"])
        assert oracle_letter(ln["record"], by[ln["video_id"]]) == ln["record"]["final_answer"]


# ---------------------------------------------------------------- 6-8

EVAL_EVERY = 100


def _run(cfg, vocab, train, val):
    t0 = time.perf_counter()
    tr = Trainer(cfg, vocab, train, val)
    tr.warmup()
    step0 = tr.evaluate()
    curve = []
    for s in range(1, cfg.steps + 1):
        tr.step()
        if s % EVAL_EVERY == 0:
            curve.append((s, tr.evaluate()))
    return {"step0": step0, "curve": curve, "final": curve[-1][1], "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def toy_runs(toy):
    vocab, train, val = toy
    out = {}
    for seed in SEEDS:
        cfg = toy_config(seed=seed)
        out[seed] = {"sdrl": _run(cfg, vocab, train, val),
                     "grpo": _run(cfg.plain_grpo(), vocab, train, val)}
    return out


@pytest.mark.criterion(6, "toy runs start at chance (0.25 +- 0.05) and reach >= 0.9 within 2000 steps, < 10 min")
def test_c6_learning_from_chance(toy_runs):
    for seed, runs in toy_runs.items():
        for name, r in runs.items():
            assert 0.20 <= r["step0"]["accuracy"] <= 0.30, (seed, name, r["step0"])
            reached = [s for s, rep in r["curve"] if rep["accuracy"] >= 0.9]
            assert reached and reached[0] <= 2000, (seed, name, r["curve"][-1])
            assert r["seconds"] < 600


@pytest.mark.criterion(7, "mean final accuracy with CVK+DVR >= plain GRPO on the same seeds")
def test_c7_sdrl_not_worse_than_grpo(toy_runs):
    sdrl = np.mean([toy_runs[s]["sdrl"]["final"]["accuracy"] for s in SEEDS])
    grpo = np.mean([toy_runs[s]["grpo"]["final"]["accuracy"] for s in SEEDS])
    print(f"final accuracy: sdrl {sdrl:.4f}, grpo {grpo:.4f}")
    assert sdrl >= grpo


@pytest.mark.criterion(8, "composite summary similarity is higher for correct than incorrect answers on >= 2/3 seeds")
def test_c8_similarity_tracks_correctness(toy_runs):
    cfg = toy_config()
    wins = 0
    for s in SEEDS:
        good, bad = composite_from_report(toy_runs[s]["sdrl"]["final"], cfg.alpha, cfg.beta)
        assert bad is not None, "no incorrect predictions to compare"
        wins += good > bad
    assert wins >= 2


# ---------------------------------------------------------------- 9

def _tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion(9, "rerunning gen-data, train, eval and inspect-weights with the same seed gives identical files")
def test_c9_cli_reproducible(tmp_path):
    ann = tmp_path / "ann.json"
    assert main(["toy-annotations", "--out", str(ann), "--videos", "6", "--seed", "4"]) == 0
    data = []
    for name in ("d1", "d2"):
        assert main(["gen-data", "--annotations", str(ann), "--out", str(tmp_path / name), "--seed", "4",
                     "--counts", "Action Order Reasoning (Extreme)=40", "Temporal Comparison=40",
                     "--clip-len", "5"]) == 0
        data.append(_tree(tmp_path / name))
    assert data[0] == data[1]

    runs = []
    small = ["steps=12", "warmup_steps=30", "batch_prompts=2", "eval_every=6", "checkpoint_every=6", "seed=4"]
    for name in ("r1", "r2"):
        assert main(["train", "--data", str(tmp_path / "d1"), "--out", str(tmp_path / name), "--set", *small]) == 0
        runs.append(_tree(tmp_path / name))
    assert runs[0] == runs[1]
    assert "checkpoints/step_00012.json" in runs[0]

    ep = json.loads((tmp_path / "d1" / "manifest.json").read_text())["train"][0]
    dumps = []
    for name in ("i1.json", "i2.json"):
        assert main(["inspect-weights", "--checkpoint", str(tmp_path / "r1" / "checkpoints" / "step_00012.json"),
                     "--episode", ep, "--seed", "9", "--out", str(tmp_path / name)]) == 0
        dumps.append((tmp_path / name).read_bytes())
    assert dumps[0] == dumps[1]

    reports = []
    for name in ("e1.json", "e2.json"):
        assert main(["eval", "--checkpoint", str(tmp_path / "r1" / "checkpoints" / "step_00012.json"),
                     "--out", str(tmp_path / name)]) == 0
        reports.append((tmp_path / name).read_bytes())
    assert reports[0] == reports[1]
