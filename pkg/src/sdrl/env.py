"""Symbolic video episodes built from generated records, and greedy evaluation."""
from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import eventflow as ef
from . import policy as pol
from .metrics import EmbeddingProvider, bleu, semantic_sim
from .trajectory import TAG_NAMES, VocabSpec, extract_answer, segment

N_LETTERS = 4
NUM_BINS = 32
RATIO_BINS = 11
N_THINK = 4
_SECONDS = re.compile(r"^(-?\d+(?:\.\d+)?) seconds$")
_INTERVAL = re.compile(r"^\[(-?\d+(?:\.\d+)?), (-?\d+(?:\.\d+)?)\]$")


def num_bin(x: float) -> int:
    return int(min(NUM_BINS - 1, max(0, round(4 * math.log2(1 + max(x, 0.0))))))


class Vocabulary:
    """Symbolic token inventory: tags, letters, templates, words, numbers,
    scratch tokens for the think span, and one token per action label."""

    def __init__(self, actions: Sequence[str], templates: Sequence[str], words: Sequence[str]):
        names = ["<pad>", *TAG_NAMES, *[ef.LETTERS[i] for i in range(N_LETTERS)]]
        names += [f"tpl:{t}" for t in sorted(set(templates))]
        names += [f"w:{w}" for w in sorted(set(words))]
        names += [f"num:{i}" for i in range(NUM_BINS)]
        names += [f"ratio:{i}" for i in range(RATIO_BINS)]
        names += [f"think:{i}" for i in range(N_THINK)]
        self.first_action = len(names)
        names += [f"act:{a}" for a in sorted(set(actions))]
        self.names = names
        self.index = {n: i for i, n in enumerate(names)}
        if len(self.index) != len(names):
            raise ValueError("duplicate vocabulary entries")
        self.spec = VocabSpec(len(names), tuple(range(1, 7)), tuple(range(7, 7 + N_LETTERS)))

    @property
    def size(self) -> int:
        return len(self.names)

    def id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise KeyError(f"token {name!r} is not in the vocabulary") from None

    def action(self, label: str) -> int:
        return self.id(f"act:{label}")

    def is_action(self, tok: int) -> bool:
        return tok >= self.first_action

    def label(self, tok: int) -> str:
        n = self.names[tok]
        return n[4:] if n.startswith("act:") else n

    @property
    def think_ids(self) -> list[int]:
        return [self.id(f"think:{i}") for i in range(N_THINK)]

    @property
    def action_ids(self) -> list[int]:
        return list(range(self.first_action, self.size))

    def to_json(self) -> dict:
        acts = [n[4:] for n in self.names if n.startswith("act:")]
        tpls = [n[4:] for n in self.names if n.startswith("tpl:")]
        words = [n[2:] for n in self.names if n.startswith("w:")]
        return {"actions": acts, "templates": tpls, "words": words}

    @classmethod
    def from_json(cls, doc: dict) -> Vocabulary:
        return cls(doc["actions"], doc["templates"], doc["words"])

    @classmethod
    def from_dataset(cls, videos: Sequence[ef.Video], lines: Sequence[dict]) -> Vocabulary:
        actions = {a.action for v in videos for a in v.actions}
        templates, words = set(), {"Yes", "No"}
        for ln in lines:
            r = ln["record"]
            templates.add(r["template"])
            for a in r["question_args"]:
                words.update(_words_in_arg(a, actions))
        return cls(sorted(actions), sorted(templates), sorted(words))


def _split_labels(text: str, actions) -> list[str] | None:
    parts = text.split(", ")
    return parts if all(p in actions for p in parts) else None


def _words_in_arg(arg: str, actions) -> list[str]:
    s = ef.unquote(arg)
    if s in actions or _split_labels(s, actions) or _is_ratio(arg):
        return []
    return [s]


def _is_ratio(arg: str) -> bool:
    try:
        x = float(arg)
    except ValueError:
        return False
    return "." in arg and 0.0 <= x <= 1.0


def encode_arg(arg: str, vocab: Vocabulary) -> list[int]:
    acts = {vocab.label(t) for t in vocab.action_ids}
    s = ef.unquote(arg)
    if s in acts:
        return [vocab.action(s)]
    seq = _split_labels(s, acts)
    if seq:
        return [vocab.action(x) for x in seq]
    if _is_ratio(arg):
        return [vocab.id(f"ratio:{int(round(float(arg) * (RATIO_BINS - 1)))}")]
    return [vocab.id(f"w:{s}")]


def encode_choice(text: str, vocab: Vocabulary) -> list[int]:
    acts = {vocab.label(t) for t in vocab.action_ids}
    if text in acts:
        return [vocab.action(text)]
    seq = _split_labels(text, acts)
    if seq:
        return [vocab.action(x) for x in seq]
    m = _SECONDS.match(text)
    if m:
        return [vocab.id(f"num:{num_bin(float(m.group(1)))}")]
    m = _INTERVAL.match(text)
    if m:
        return [vocab.id(f"num:{num_bin(float(m.group(1)))}"), vocab.id(f"num:{num_bin(float(m.group(2)))}")]
    return [vocab.id(f"w:{text}")]


@dataclass(frozen=True)
class SymbolicVideo:
    video_id: str
    actions: tuple[ef.ActionTriplet, ...]
    tokens: tuple[int, ...]

    @classmethod
    def from_video(cls, video: ef.Video, vocab: Vocabulary, interval=None) -> SymbolicVideo:
        acts = tuple(video.context(interval)) if interval is not None else video.actions
        return cls(video.video_id, acts, tuple(vocab.action(a.action) for a in acts))


@dataclass(frozen=True)
class Episode:
    prompt: pol.PromptEncoding
    gt_answer: int
    gt_summary: tuple[int, ...]
    record_ref: str
    n_choices: int
    category: str = ""

    @property
    def gt_letter(self) -> str:
        return ef.LETTERS[self.gt_answer - 7]


def swap_noise(tokens: Sequence[int], p: float, rng) -> tuple[int, ...]:
    """Observation channel that swaps each adjacent pair with probability ``p``.

    Pairs are visited left to right and a token moves at most once.
    """
    out = list(tokens)
    i = 0
    while i < len(out) - 1:
        if rng.random() < p:
            out[i], out[i + 1] = out[i + 1], out[i]
            i += 2
        else:
            i += 1
    return tuple(out)


def episode_rng(record_id: str, seed: int):
    return np.random.default_rng([seed, zlib.crc32(record_id.encode())])


def encode_episode(line: dict, video: ef.Video, vocab: Vocabulary, obs_swap: float = 0.0,
                   seed: int = 0) -> Episode:
    """Token episode for one dataset row.

    With ``obs_swap > 0`` the observed clip passes through ``swap_noise``,
    seeded by the record id, while the reference summary stays exact.
    """
    rec = line["record"]
    if line.get("video_id", video.video_id) != video.video_id:
        raise ValueError("record does not reference this video")
    sv = SymbolicVideo.from_video(video, vocab, rec["video_interval"])
    seen = sv.tokens
    if obs_swap > 0:
        seen = swap_noise(seen, obs_swap, episode_rng(line.get("id", ""), seed))
    q = [vocab.id(f"tpl:{rec['template']}")]
    for a in rec["question_args"]:
        q.extend(encode_arg(a, vocab))
    opts = tuple(tuple(encode_choice(c, vocab)) for c in ef.split_choices(rec["choices"]))
    summary = tuple(vocab.action(x) for x in ef.synthesize_gt_summary(video, rec["video_interval"]))
    if not summary:
        raise ValueError("empty reference summary")
    gt = vocab.spec.choice_ids[ef.LETTERS.index(rec["final_answer"])]
    prompt = pol.PromptEncoding(seen, tuple(q), opts, vocab.spec.tag_ids)
    return Episode(prompt, gt, summary, line.get("id", ""), len(opts), rec["category"])


def load_dataset(data_dir):
    """Read a generated dataset directory: videos, rows and manifest."""
    import os
    videos = ef.load_annotations(os.path.join(data_dir, "annotations.json"))
    with open(os.path.join(data_dir, "dataset.jsonl")) as f:
        lines = [json.loads(x) for x in f if x.strip()]
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    return videos, lines, manifest


def build_episodes(videos, lines, vocab: Vocabulary, ids=None, obs_swap: float = 0.0,
                   seed: int = 0) -> list[Episode]:
    by_vid = {v.video_id: v for v in videos}
    keep = None if ids is None else set(ids)
    return [encode_episode(ln, by_vid[ln["video_id"]], vocab, obs_swap, seed) for ln in lines
            if keep is None or ln["id"] in keep]


# ------------------------------------------------------------------ evaluation

def oracle_sequence(ep: Episode, vocab: Vocabulary) -> list[int]:
    s, se, t, te, a, ae = vocab.spec.tag_ids
    return [s, *ep.gt_summary, se, t, vocab.think_ids[0], te, a, ep.gt_answer, ae]


def greedy_generate(params: pol.Params, episodes: Sequence[Episode], max_len: int, vocab: Vocabulary,
                    batch: int = 512) -> list[list[int]]:
    out = []
    for i in range(0, len(episodes), batch):
        chunk = episodes[i:i + batch]
        gen, _, alive = pol.rollout(params, [e.prompt for e in chunk], 1, max_len, None,
                                    vocab.spec.answer_close, greedy=True)
        out.extend(gen[j, :int(alive[j].sum())].tolist() for j in range(len(chunk)))
    return out


def evaluate(policy, episodes: Sequence[Episode], vocab: Vocabulary, max_len: int = 16,
             provider: EmbeddingProvider | None = None, max_n: int = 4, details: bool = False):
    """Greedy accuracy, parse rate and summary similarity split by correctness.

    ``policy`` is either ``Params`` or a callable mapping episodes to token
    sequences (used for scripted policies).
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    provider = provider or EmbeddingProvider()
    seqs = policy(episodes) if callable(policy) else greedy_generate(policy, episodes, max_len, vocab)
    stats = {True: ([], []), False: ([], [])}
    rows = []
    n_ok = n_correct = 0
    for ep, seq in zip(episodes, seqs):
        traj = segment(seq, vocab.spec)
        correct = extract_answer(traj) == ep.gt_answer
        ref = [vocab.label(t) for t in ep.gt_summary]
        cand = [vocab.label(t) for t in traj.segment_tokens("summary")]
        b = bleu(cand, ref, max_n) if cand else 0.0
        sem = semantic_sim(cand, ref, provider) if cand else 0.0
        stats[correct][0].append(b)
        stats[correct][1].append(sem)
        n_ok += traj.parse_ok
        n_correct += correct
        if details:
            rows.append({"id": ep.record_ref, "correct": bool(correct), "parse_ok": traj.parse_ok,
                         "bleu": b, "sem": sem, "tokens": list(seq)})

    def mean(x):
        return float(np.mean(x)) if x else None

    report = {
        "accuracy": n_correct / len(episodes),
        "mean_bleu_correct": mean(stats[True][0]),
        "mean_bleu_incorrect": mean(stats[False][0]),
        "mean_sem_correct": mean(stats[True][1]),
        "mean_sem_incorrect": mean(stats[False][1]),
        "parse_rate": n_ok / len(episodes),
    }
    return (report, rows) if details else report


def composite_from_report(report: dict, alpha: float = 0.7, beta: float = 0.3):
    """Mean composite similarity for correct and incorrect predictions."""
    def comb(sem, b):
        return None if sem is None else alpha * sem + beta * b
    return (comb(report["mean_sem_correct"], report["mean_bleu_correct"]),
            comb(report["mean_sem_incorrect"], report["mean_bleu_incorrect"]))


class ScriptedOracle:
    """Emits the reference summary and answer for every episode."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def __call__(self, episodes):
        return [oracle_sequence(e, self.vocab) for e in episodes]
