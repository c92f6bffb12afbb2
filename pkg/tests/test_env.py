from __future__ import annotations

import numpy as np
import pytest

from sdrl import eventflow as ef
from sdrl import policy as pol
from sdrl.env import (ScriptedOracle, Vocabulary, build_episodes, encode_episode, evaluate, oracle_sequence,
                      swap_noise)
from sdrl.trajectory import segment

REPORT_KEYS = {"accuracy", "mean_bleu_correct", "mean_bleu_incorrect", "mean_sem_correct",
               "mean_sem_incorrect", "parse_rate"}


@pytest.fixture(scope="module")
def toy():
    videos = ef.make_toy_annotations(8, 6, 12, seed=0)
    counts = {"Temporal Yes/No": 20, "Action Order Reasoning (Extreme)": 20, "Temporal Comparison": 20,
              "Duration Estimation": 10, "Temporal Localization": 10, "Action Order Sorting": 10,
              "Temporal QA from Narration": 10}
    lines, manifest = ef.generate_dataset(videos, counts, seed=0, clip_len=4)
    vocab = Vocabulary.from_dataset(videos, lines)
    return videos, lines, manifest, vocab


def test_yes_no_prompt_layout():
    T = ef.ActionTriplet
    v = ef.Video("v", 30.0, (T("a", 1, 2), T("b", 3, 5), T("c", 7, 9)))
    lines, _ = ef.generate_dataset([v], {"Temporal Yes/No": 1}, seed=0, val_fraction=0.0)
    vocab = Vocabulary.from_dataset([v], lines)
    ep = encode_episode(lines[0], v, vocab)
    assert len(ep.prompt.video) == 3
    assert len(ep.prompt.question) == 3  # template token and two action arguments
    assert len(ep.prompt.options) == 2 and ep.n_choices == 2
    assert len(ep.prompt.tokens) == 3 + 3 + 2 + len(vocab.spec.tag_ids)


def test_episode_round_trip(toy):
    videos, lines, manifest, vocab = toy
    eps = build_episodes(videos, lines, vocab)
    assert eps == build_episodes(videos, lines, vocab)
    for ln, ep in zip(lines, eps):
        assert ep.gt_letter == ln["record"]["final_answer"]
        assert [vocab.label(t) for t in ep.gt_summary] == ef.synthesize_gt_summary(
            {v.video_id: v for v in videos}[ln["video_id"]], ln["record"]["video_interval"])


def test_vocabulary_json_round_trip(toy):
    _, _, _, vocab = toy
    again = Vocabulary.from_json(vocab.to_json())
    assert again.names == vocab.names
    assert vocab.spec.choice_ids == (7, 8, 9, 10)


def test_observation_noise_keeps_reference(toy):
    videos, lines, _, vocab = toy
    clean = build_episodes(videos, lines, vocab)
    noisy = build_episodes(videos, lines, vocab, obs_swap=0.5)
    assert noisy == build_episodes(videos, lines, vocab, obs_swap=0.5)
    changed = 0
    for c, n in zip(clean, noisy):
        assert c.gt_summary == n.gt_summary
        assert sorted(c.prompt.video) == sorted(n.prompt.video)
        changed += c.prompt.video != n.prompt.video
    assert changed > 0


def test_swap_noise_extremes():
    rng = np.random.default_rng(0)
    assert swap_noise((1, 2, 3, 4, 5), 0.0, rng) == (1, 2, 3, 4, 5)
    assert swap_noise((1, 2, 3, 4, 5), 1.0, rng) == (2, 1, 4, 3, 5)


def test_uniform_policy_is_at_chance(toy):
    videos, lines, _, vocab = toy
    eps = build_episodes(videos, lines, vocab)
    cfg = pol.PolicyConfig(vocab.size, vocab.spec.choice_ids, 4, 8, 4, n_q=6, opt_len=6, video_len=6)
    rep = evaluate(pol.zero_params(cfg), eps, vocab, 16)
    assert set(rep) == REPORT_KEYS
    assert rep["parse_rate"] == 0.0 and rep["accuracy"] == 0.0


def test_scripted_oracle_scores_perfectly(toy):
    videos, lines, _, vocab = toy
    eps = build_episodes(videos, lines, vocab)
    rep = evaluate(ScriptedOracle(vocab), eps, vocab)
    assert rep["accuracy"] == 1.0 and rep["parse_rate"] == 1.0
    assert rep["mean_bleu_correct"] == 1.0 and rep["mean_sem_correct"] == 1.0
    assert rep["mean_bleu_incorrect"] is None
    t = segment(oracle_sequence(eps[0], vocab), vocab.spec)
    assert t.parse_ok


def test_similarity_split_follows_correctness(toy):
    videos, lines, _, vocab = toy
    eps = build_episodes(videos, lines, vocab)[:20]
    s, se, t, te, a, ae = vocab.spec.tag_ids

    def policy(episodes):
        out = []
        for i, ep in enumerate(episodes):
            if i % 2:
                wrong = [x for x in vocab.spec.choice_ids[:ep.n_choices] if x != ep.gt_answer][0]
                out.append([s, vocab.action_ids[0], se, t, vocab.think_ids[0], te, a, wrong, ae])
            else:
                out.append(oracle_sequence(ep, vocab))
        return out

    rep, rows = evaluate(policy, eps, vocab, details=True)
    assert rep["accuracy"] == 0.5
    assert rep["mean_bleu_correct"] > rep["mean_bleu_incorrect"]
    assert len(rows) == 20 and all(r["correct"] == (i % 2 == 0) for i, r in enumerate(rows))


def test_empty_split_rejected(toy):
    _, _, _, vocab = toy
    with pytest.raises(ValueError):
        evaluate(ScriptedOracle(vocab), [], vocab)
