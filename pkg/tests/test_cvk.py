from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import B, C, make_group, random_dists, well_formed
from sdrl.cvk import compute_anchor, kl, kl_dispersion, summary_weights
from sdrl.trajectory import SampleGroup, VocabSpec, segment


def _pair_group(p1, p2, correct=(True, True)):
    vocab = VocabSpec(12, (1, 2, 3, 4, 5, 6), (7, 8, 9, 10))
    seqs, dists = [], []
    for p, ok in zip((p1, p2), correct):
        s = well_formed([11], [11], [B if ok else C])
        d = np.full((len(s), 12), 1 / 12)
        row = np.zeros(12)
        row[:len(p)] = p
        d[1] = row
        seqs.append(s)
        dists.append(d)
    return make_group(vocab, seqs, dists=dists)


def test_single_correct_member_is_the_anchor(vocab):
    rng = np.random.default_rng(0)
    seqs = [well_formed([11, 12], [13], [B]), well_formed([11, 12, 13], [13], [C]), well_formed([12], [13], [C])]
    g = make_group(vocab, seqs, rng)
    a = compute_anchor(g, [1, 0, 0])
    np.testing.assert_array_equal(a.dists, g[0].segment_dists("summary"))
    assert a.contributor_count == 1 and not a.used_fallback


def test_two_opposite_members():
    g = _pair_group([1.0, 0.0], [0.0, 1.0])
    a = compute_anchor(g, [1, 1])
    np.testing.assert_allclose(a.dists[0, :2], [0.5, 0.5])
    D = kl_dispersion(g, a)
    assert D[0] == pytest.approx(math.log(2), abs=1e-12)


def test_fallback_uses_every_member(vocab):
    rng = np.random.default_rng(3)
    seqs = [well_formed([11, 12], [13], [C]), well_formed([11, 12], [13], [C])]
    g = make_group(vocab, seqs, rng)
    a = compute_anchor(g, [0, 0])
    assert a.used_fallback and a.contributor_count == 2
    expect = (g[0].segment_dists("summary") + g[1].segment_dists("summary")) / 2
    np.testing.assert_allclose(a.dists, expect)


def test_no_summary_anywhere_gives_none(vocab):
    g = make_group(vocab, [[1, 11, 6], [1, 12, 6]])
    assert compute_anchor(g, [0, 0]) is None


def test_identical_members_have_zero_dispersion(vocab):
    rng = np.random.default_rng(1)
    s = well_formed([11, 12, 13], [13], [B])
    d = random_dists(rng, len(s), vocab.size)
    g = make_group(vocab, [s, s, s], dists=[d, d, d])
    D = kl_dispersion(g, compute_anchor(g, [1, 1, 1]))
    np.testing.assert_allclose(D, 0.0, atol=1e-15)
    # rounding in the anchor mean must not turn into a full penalty
    g8 = make_group(vocab, [s] * 8, dists=[d] * 8)
    assert (summary_weights(kl_dispersion(g8, compute_anchor(g8, [1] * 8)), 0.5).weights == 1).all()


def test_dispersion_only_counts_members_reaching_a_position(vocab):
    rng = np.random.default_rng(2)
    long = well_formed([11, 12, 13], [13], [B])
    short = well_formed([11], [13], [C])
    g = make_group(vocab, [long, long, short], rng)
    a = compute_anchor(g, [1, 1, 0])
    D = kl_dispersion(g, a)
    later = [kl(t.segment_dists("summary")[2:3], a.dists[2:3])[0] for t in g if len(t.segment_tokens("summary")) > 2]
    assert D[2] == pytest.approx(np.mean(later), abs=1e-12)


def test_summary_weight_extremes():
    w = summary_weights([0.0, 1.0], 0.5)
    np.testing.assert_allclose(w.weights, [1.0, 0.5])
    np.testing.assert_array_equal(summary_weights([0.3, 0.3, 0.3]).weights, 1.0)
    assert w.for_member(4).tolist() == [1.0, 0.5, 1.0, 1.0]
    with pytest.raises(ValueError):
        summary_weights([-0.1, 0.2])
    with pytest.raises(ValueError):
        summary_weights([0.1], lam=1.5)


def test_kl_examples():
    assert kl([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert np.isfinite(kl([1.0, 0.0], [0.0, 1.0]))


def _simplex_grid(V, steps):
    for c in itertools.product(range(steps + 1), repeat=V - 1):
        if sum(c) <= steps:
            yield np.array([*c, steps - sum(c)], dtype=float) / steps


def test_anchor_beats_simplex_grid():
    rng = np.random.default_rng(11)
    for _ in range(20):
        V = int(rng.integers(2, 4))
        P = random_dists(rng, int(rng.integers(2, 6)), V)
        mean = P.mean(0)
        best = (kl(P, mean)).sum()
        for q in _simplex_grid(V, 40):
            assert best <= kl(P, q).sum() + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_summary_weights_bounded(V, n, seed):
    rng = np.random.default_rng(seed)
    D = rng.exponential(1.0, n)
    for lam in (0.0, 0.5, 1.0):
        w = summary_weights(D, lam).weights
        assert (w >= 1 - lam - 1e-15).all() and (w <= 1 + 1e-15).all()
