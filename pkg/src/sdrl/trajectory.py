"""Token-level structured outputs: vocabulary layout, segmentation and logs.

Spans are 0-based half-open ``(start, end)`` index pairs into the generated
token list. Tag tokens never fall inside a span.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TAG_NAMES = ("<summary>", "</summary>", "<think>", "</think>", "<answer>", "</answer>")
SEGMENTS = ("summary", "think", "answer")
EMPTY_SPAN = (0, 0)


@dataclass(frozen=True)
class VocabSpec:
    size: int
    tag_ids: tuple[int, ...]
    choice_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tag_ids", tuple(int(t) for t in self.tag_ids))
        object.__setattr__(self, "choice_ids", tuple(int(c) for c in self.choice_ids))
        if self.size <= 0:
            raise ValueError("vocabulary size must be positive")
        if len(self.tag_ids) != 6 or len(set(self.tag_ids)) != 6:
            raise ValueError("need six distinct tag ids")
        if any(t < 0 or t >= self.size for t in self.tag_ids + self.choice_ids):
            raise ValueError("token id out of range")
        if set(self.tag_ids) & set(self.choice_ids):
            raise ValueError("choice ids overlap tag ids")
        if len(set(self.choice_ids)) != len(self.choice_ids):
            raise ValueError("duplicate choice ids")

    @property
    def summary_open(self) -> int:
        return self.tag_ids[0]

    @property
    def answer_close(self) -> int:
        return self.tag_ids[5]

    def is_tag(self, tok: int) -> bool:
        return tok in self.tag_ids


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StructuredTrajectory:
    tokens: tuple[int, ...]
    dists: np.ndarray | None
    summary_span: tuple[int, int]
    think_span: tuple[int, int]
    answer_span: tuple[int, int]
    parse_ok: bool
    choice_ids: tuple[int, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.dists is not None:
            d = _frozen(self.dists)
            if d.ndim != 2 or d.shape[0] != len(self.tokens):
                raise ValueError("need one distribution per token")
            if (d < 0).any() or np.abs(d.sum(1) - 1.0).max(initial=0.0) > 1e-9:
                raise ValueError("distributions must be nonnegative and sum to 1")
            object.__setattr__(self, "dists", d)

    def __len__(self):
        return len(self.tokens)

    def span(self, name: str) -> tuple[int, int]:
        return getattr(self, f"{name}_span")

    def segment_tokens(self, name: str) -> list[int]:
        s, e = self.span(name)
        return list(self.tokens[s:e])

    def segment_dists(self, name: str) -> np.ndarray:
        s, e = self.span(name)
        if self.dists is None:
            raise ValueError("trajectory carries no distributions")
        return self.dists[s:e]

    def to_log(self, prompt_id) -> str:
        return json.dumps({
            "prompt_id": prompt_id,
            "tokens": list(self.tokens),
            "spans": {n: list(self.span(n)) for n in SEGMENTS},
            "parse_ok": self.parse_ok,
        }, sort_keys=True)


def segment(tokens: Sequence[int], vocab: VocabSpec, dists=None) -> StructuredTrajectory:
    """Split a generated sequence into summary/think/answer spans.

    Every tag must occur exactly once, in order, with a nonempty segment
    between each open/close pair. Anything else is a failed parse.
    """
    tokens = tuple(int(t) for t in tokens)
    if not tokens:
        raise ValueError("empty token sequence")
    pos = []
    for tag in vocab.tag_ids:
        hits = [i for i, t in enumerate(tokens) if t == tag]
        if len(hits) != 1:
            pos = None
            break
        pos.append(hits[0])
    ok = pos is not None and all(a < b for a, b in zip(pos, pos[1:]))
    if ok:
        spans = [(pos[0] + 1, pos[1]), (pos[2] + 1, pos[3]), (pos[4] + 1, pos[5])]
        ok = all(e > s for s, e in spans)
    if not ok:
        spans = [EMPTY_SPAN] * 3
    return StructuredTrajectory(tokens, dists, spans[0], spans[1], spans[2], bool(ok),
                                vocab.choice_ids)


def extract_answer(traj: StructuredTrajectory) -> int | None:
    if not traj.parse_ok:
        return None
    for t in traj.segment_tokens("answer"):
        if t in traj.choice_ids:
            return t
    return None


@dataclass(frozen=True)
class SampleGroup:
    prompt_id: object
    trajectories: tuple[StructuredTrajectory, ...]
    vocab: VocabSpec

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if len(self.trajectories) < 2:
            raise ValueError("a group needs at least two trajectories")
        if any(t.choice_ids != self.vocab.choice_ids for t in self.trajectories):
            raise ValueError("trajectories built against a different vocabulary")

    @property
    def G(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]


def parse_log_line(line: str, vocab: VocabSpec) -> tuple[object, StructuredTrajectory]:
    rec = json.loads(line)
    traj = segment(rec["tokens"], vocab)
    spans = {n: tuple(rec["spans"][n]) for n in SEGMENTS}
    if traj.parse_ok != rec["parse_ok"] or any(traj.span(n) != spans[n] for n in SEGMENTS):
        raise ValueError("log line spans disagree with re-segmentation")
    return rec["prompt_id"], traj


def write_log(path, items: Iterable[tuple[object, StructuredTrajectory]]):
    with open(path, "w") as f:
        for pid, traj in items:
            f.write(traj.to_log(pid) + "\n")
