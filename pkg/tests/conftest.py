from __future__ import annotations

import numpy as np
import pytest

from sdrl import eventflow as ef
from sdrl.trajectory import SampleGroup, VocabSpec, segment

# ids: 0 pad, 1-6 tags, 7-10 letters A-D, 11+ content
SUM, ESUM, THK, ETHK, ANS, EANS = range(1, 7)
A, B, C, D = range(7, 11)


@pytest.fixture
def vocab():
    return VocabSpec(16, (SUM, ESUM, THK, ETHK, ANS, EANS), (A, B, C, D))


def well_formed(summary, think, answer):
    return [SUM, *summary, ESUM, THK, *think, ETHK, ANS, *answer, EANS]


def random_dists(rng, T, V, sharp=1.0):
    x = rng.gamma(sharp, 1.0, (T, V)) + 1e-12
    return x / x.sum(1, keepdims=True)


def make_group(vocab, seqs, rng=None, dists=None):
    rng = rng or np.random.default_rng(0)
    trajs = []
    for i, s in enumerate(seqs):
        d = dists[i] if dists is not None else random_dists(rng, len(s), vocab.size)
        trajs.append(segment(s, vocab, d))
    return SampleGroup("p", trajs, vocab)


def hand_videos():
    """Hand-written annotation fixtures, including overlaps and a repeated label."""
    T = ef.ActionTriplet
    return [
        ef.Video("kitchen", 60.0, (T("crack eggs", 1.0, 4.5), T("whisk batter", 5.0, 12.0),
                                   T("heat pan", 11.0, 16.0), T("pour batter", 17.5, 20.0),
                                   T("flip pancake", 24.0, 26.5), T("plate food", 30.0, 41.0))),
        ef.Video("phone", 140.0, (T("place label", 30.0, 40.0), T("wipe screen", 45.0, 60.5),
                                  T("paste protector on the screen", 62.0, 80.0),
                                  T("remove the label", 85.0, 101.0), T("wipe screen again", 104.0, 130.0))),
        ef.Video("garden", 90.0, (T("dig hole", 2.0, 10.0), T("water soil", 8.0, 14.0),
                                  T("plant seed", 15.0, 19.0), T("cover seed", 19.5, 25.0),
                                  T("water soil", 30.0, 33.0), T("rake bed", 36.0, 52.0),
                                  T("wash tools", 60.0, 71.5))),
        ef.Video("desk", 50.0, (T("open laptop", 0.5, 2.0), T("type email", 3.0, 18.0),
                                T("drink coffee", 6.0, 9.0), T("read reply", 20.0, 27.0),
                                T("close laptop", 29.0, 30.0))),
        ef.Video("bike", 200.0, (T("flip bike", 3.0, 9.0), T("remove wheel", 10.0, 40.0),
                                 T("patch tube", 45.0, 95.0), T("inflate tube", 99.0, 110.0),
                                 T("mount wheel", 112.0, 150.0), T("test ride", 160.0, 190.0))),
    ]


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[n] = ("PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, text = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")
