"""A small autoregressive categorical policy with hand-written gradients.

The input at each step is the last ``k`` tokens of the stream (video tokens
followed by generated tokens), plus a fixed block of question tokens. Two
tanh layers feed a softmax over the vocabulary. A pointer head adds, for
each answer letter, a learned score for every window slot holding a token
of that letter's option. This lets answers ground in the summary the policy
has just written.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .trajectory import SampleGroup, VocabSpec, segment

PAD = 0
LAYERS = ("E", "W1", "b1", "W2", "b2", "Wo", "bo", "Wg")
CHECKPOINT_FORMAT = "sdrl-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int
    choice_ids: tuple[int, ...]
    d: int = 32
    d_h: int = 64
    k: int = 8
    n_q: int = 4
    opt_len: int = 6
    video_len: int = 8

    def __post_init__(self):
        object.__setattr__(self, "choice_ids", tuple(int(c) for c in self.choice_ids))
        for name in ("vocab_size", "d", "d_h", "k", "n_q", "opt_len", "video_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def n_choices(self) -> int:
        return len(self.choice_ids)

    def shapes(self) -> dict:
        din = (self.k + self.n_q) * self.d
        return {"E": (self.vocab_size, self.d), "W1": (din, self.d_h), "b1": (self.d_h,),
                "W2": (self.d_h, self.d_h), "b2": (self.d_h,), "Wo": (self.d_h, self.vocab_size),
                "bo": (self.vocab_size,), "Wg": (self.d_h, self.k)}


class Params:
    """Named parameter arrays. ``snapshot`` returns a read-only deep copy."""

    def __init__(self, cfg: PolicyConfig, arrays: dict):
        shapes = cfg.shapes()
        if set(arrays) != set(shapes):
            raise ValueError("parameter names do not match the configuration")
        for name, shp in shapes.items():
            if tuple(np.shape(arrays[name])) != tuple(shp):
                raise ValueError(f"{name}: shape {np.shape(arrays[name])} != {shp}")
        self.cfg = cfg
        self.arrays = {n: np.asarray(arrays[n], dtype=np.float64) for n in LAYERS}
        self.frozen = False

    def __getitem__(self, name):
        return self.arrays[name]

    def copy(self) -> Params:
        return Params(self.cfg, {n: a.copy() for n, a in self.arrays.items()})

    def snapshot(self) -> Params:
        snap = self.copy()
        for a in snap.arrays.values():
            a.setflags(write=False)
        snap.frozen = True
        return snap

    def zeros_like(self) -> dict:
        return {n: np.zeros_like(a) for n, a in self.arrays.items()}

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays.values())


def init_params(cfg: PolicyConfig, seed: int = 0, emb_scale: float = 0.5) -> Params:
    rng = np.random.default_rng(seed)
    shp = cfg.shapes()
    din = shp["W1"][0]
    arrays = {
        "E": rng.normal(0.0, emb_scale, shp["E"]),
        "W1": rng.normal(0.0, 1.0 / np.sqrt(din), shp["W1"]),
        "b1": np.zeros(shp["b1"]),
        "W2": rng.normal(0.0, 1.0 / np.sqrt(cfg.d_h), shp["W2"]),
        "b2": np.zeros(shp["b2"]),
        # zero heads: the untrained policy is uniform over the vocabulary
        "Wo": np.zeros(shp["Wo"]),
        "bo": np.zeros(shp["bo"]),
        "Wg": np.zeros(shp["Wg"]),
    }
    return Params(cfg, arrays)


def zero_params(cfg: PolicyConfig) -> Params:
    return Params(cfg, {n: np.zeros(s) for n, s in cfg.shapes().items()})


# ------------------------------------------------------------------ prompts

@dataclass(frozen=True)
class PromptEncoding:
    """Token view of one question.

    ``tokens`` is the flat prompt (video, question, options, instruction).
    The policy reads the structured fields: the video seeds the stream,
    ``question`` is the fixed context block, ``options`` feed the pointer.
    """
    video: tuple[int, ...]
    question: tuple[int, ...]
    options: tuple[tuple[int, ...], ...]
    instruction: tuple[int, ...]

    @property
    def tokens(self) -> tuple[int, ...]:
        flat = list(self.video) + list(self.question)
        for o in self.options:
            flat.extend(o)
        return tuple(flat + list(self.instruction))


@dataclass
class Contexts:
    win: np.ndarray       # (n, k) int
    question: np.ndarray  # (n, n_q) int
    options: np.ndarray   # (n, n_choices, opt_len) int, -1 padded

    def __len__(self):
        return self.win.shape[0]

    def take(self, idx) -> Contexts:
        return Contexts(self.win[idx], self.question[idx], self.options[idx])


def prompt_arrays(cfg: PolicyConfig, prompts: Sequence[PromptEncoding]):
    n = len(prompts)
    q = np.full((n, cfg.n_q), PAD, dtype=np.int64)
    opts = np.full((n, cfg.n_choices, cfg.opt_len), -1, dtype=np.int64)
    vid = np.full((n, cfg.video_len), PAD, dtype=np.int64)
    for i, p in enumerate(prompts):
        qq = p.question[:cfg.n_q]
        q[i, :len(qq)] = qq
        for j, o in enumerate(p.options[:cfg.n_choices]):
            o = o[:cfg.opt_len]
            opts[i, j, :len(o)] = o
        v = p.video[-cfg.video_len:]
        if v:
            vid[i, cfg.video_len - len(v):] = v
    return vid, q, opts


# ------------------------------------------------------------------ forward / backward

def forward(params: Params, ctx: Contexts):
    """Next-token distributions for a batch of contexts, plus a backward cache."""
    cfg = params.cfg
    E = params["E"]
    n, k, d = len(ctx), cfg.k, cfg.d
    if ctx.win.size and (ctx.win.max() >= cfg.vocab_size or ctx.win.min() < 0):
        raise ValueError("context id out of range")
    x = np.concatenate([E[ctx.win].reshape(n, k * d), E[ctx.question].reshape(n, cfg.n_q * d)], 1)
    h1 = np.tanh(x @ params["W1"] + params["b1"])
    h2 = np.tanh(h1 @ params["W2"] + params["b2"])
    logits = h2 @ params["Wo"] + params["bo"]
    match = (ctx.win[:, :, None, None] == ctx.options[:, None, :, :]).any(-1).astype(np.float64)
    gs = h2 @ params["Wg"]
    ptr = np.einsum("ni,nij->nj", gs, match)
    logits[:, list(cfg.choice_ids)] += ptr
    logits -= logits.max(1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(1, keepdims=True)
    return p, (ctx, x, h1, h2, match, p)


def backward(params: Params, cache, tokens, coef) -> dict:
    """Gradient of ``sum_i coef_i * log p_i(tokens_i)`` with respect to every layer."""
    ctx, x, h1, h2, match, p = cache
    cfg = params.cfg
    tokens = np.asarray(tokens, dtype=np.int64)
    coef = np.asarray(coef, dtype=np.float64)
    n = len(tokens)
    dlo = -p * coef[:, None]
    dlo[np.arange(n), tokens] += coef
    g = {}
    g["Wo"] = h2.T @ dlo
    g["bo"] = dlo.sum(0)
    dptr = dlo[:, list(cfg.choice_ids)]
    dgs = np.einsum("nj,nij->ni", dptr, match)
    g["Wg"] = h2.T @ dgs
    dh2 = (dlo @ params["Wo"].T + dgs @ params["Wg"].T) * (1.0 - h2 ** 2)
    g["W2"] = h1.T @ dh2
    g["b2"] = dh2.sum(0)
    dh1 = (dh2 @ params["W2"].T) * (1.0 - h1 ** 2)
    g["W1"] = x.T @ dh1
    g["b1"] = dh1.sum(0)
    dx = dh1 @ params["W1"].T
    gE = np.zeros_like(params["E"])
    k, d = cfg.k, cfg.d
    np.add.at(gE, ctx.win, dx[:, :k * d].reshape(n, k, d))
    np.add.at(gE, ctx.question, dx[:, k * d:].reshape(n, cfg.n_q, d))
    g["E"] = gE
    return g


def token_probs(params: Params, ctx: Contexts, tokens):
    p, cache = forward(params, ctx)
    return p[np.arange(len(tokens)), np.asarray(tokens)], p, cache


# ------------------------------------------------------------------ sampling

def _window(stream, pos, k):
    n = stream.shape[0]
    win = np.full((n, k), PAD, dtype=np.int64)
    lo = max(0, pos - k)
    w = stream[:, lo:pos]
    win[:, k - w.shape[1]:] = w
    return win


def rollout(params: Params, prompts: Sequence[PromptEncoding], G: int, max_len: int, rng,
            eos: int, greedy: bool = False):
    """Sample ``G`` continuations for every prompt, all rows in lockstep.

    Returns the generated-token matrix (padded with PAD after ``eos``), the
    per-step distributions and the alive mask, each with rows ordered
    prompt-major.
    """
    cfg = params.cfg
    vid, q, opts = prompt_arrays(cfg, prompts)
    vid, q, opts = (np.repeat(a, G, 0) for a in (vid, q, opts))
    n = vid.shape[0]
    L = cfg.video_len
    stream = np.concatenate([vid, np.full((n, max_len), PAD, dtype=np.int64)], 1)
    dists = np.zeros((n, max_len, cfg.vocab_size))
    alive = np.zeros((n, max_len), dtype=bool)
    done = np.zeros(n, dtype=bool)
    for t in range(max_len):
        ctx = Contexts(_window(stream, L + t, cfg.k), q, opts)
        p, _ = forward(params, ctx)
        if greedy:
            tok = p.argmax(1)
        else:
            u = rng.random(n)
            tok = np.minimum((np.cumsum(p, 1) < u[:, None]).sum(1), cfg.vocab_size - 1)
        tok = np.where(done, PAD, tok)
        alive[:, t] = ~done
        dists[:, t] = p
        stream[:, L + t] = tok
        done |= tok == eos
        if done.all():
            break
    return stream[:, L:], dists, alive


def teacher_contexts(cfg: PolicyConfig, prompts: Sequence[PromptEncoding], seqs: Sequence[Sequence[int]]):
    """Contexts for every realized position of each sequence, concatenated in order."""
    vid, q, opts = prompt_arrays(cfg, prompts)
    L = cfg.video_len
    wins, qs, os_, toks = [], [], [], []
    for i, s in enumerate(seqs):
        s = np.asarray(s, dtype=np.int64)
        stream = np.concatenate([vid[i], s])
        T = len(s)
        idx = (L + np.arange(T))[:, None] - cfg.k + np.arange(cfg.k)[None, :]
        w = np.where(idx >= 0, stream[np.clip(idx, 0, None)], PAD)
        wins.append(w)
        qs.append(np.repeat(q[i:i + 1], T, 0))
        os_.append(np.repeat(opts[i:i + 1], T, 0))
        toks.append(s)
    return (Contexts(np.concatenate(wins), np.concatenate(qs), np.concatenate(os_)),
            np.concatenate(toks))


def trajectories_from_rollout(gen, dists, alive, vocab: VocabSpec):
    out = []
    for i in range(gen.shape[0]):
        T = int(alive[i].sum())
        out.append(segment(gen[i, :T], vocab, dists[i, :T]))
    return out


def sample_group(params: Params, prompt: PromptEncoding, G: int, max_len: int, seed: int,
                 vocab: VocabSpec, prompt_id=None) -> SampleGroup:
    if G < 2:
        raise ValueError("G must be >= 2")
    if max_len < 8:
        raise ValueError("max_len must be >= 8")
    rng = np.random.default_rng(seed)
    gen, dists, alive = rollout(params, [prompt], G, max_len, rng, vocab.answer_close)
    return SampleGroup(prompt_id, trajectories_from_rollout(gen, dists, alive, vocab), vocab)


# ------------------------------------------------------------------ optimisation

def grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


@dataclass
class SGDMomentum:
    lr: float = 0.05
    momentum: float = 0.9
    state: dict = field(default_factory=dict)

    def step(self, params: Params, grads: dict):
        """Ascent step: parameters move along the gradient."""
        for n in LAYERS:
            m = self.state.get(n)
            if m is None:
                m = self.state[n] = np.zeros_like(params[n])
            m *= self.momentum
            m += grads[n]
            params.arrays[n] += self.lr * m

    def reset(self):
        self.state = {}


@dataclass
class Adam:
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    state: dict = field(default_factory=dict)
    t: int = 0

    def step(self, params: Params, grads: dict):
        self.t += 1
        for n in LAYERS:
            m, v = self.state.setdefault(n, (np.zeros_like(params[n]), np.zeros_like(params[n])))
            m *= self.b1
            m += (1 - self.b1) * grads[n]
            v *= self.b2
            v += (1 - self.b2) * grads[n] ** 2
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            params.arrays[n] += self.lr * mh / (np.sqrt(vh) + self.eps)

    def reset(self):
        self.state, self.t = {}, 0


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, params: Params, extra: dict | None = None):
    cfg = params.cfg
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "shapes": {n: list(params[n].shape) for n in LAYERS},
        "params": {n: params[n].ravel().tolist() for n in LAYERS},
        "extra": extra or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path, expect: PolicyConfig | None = None) -> tuple[Params, dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a policy checkpoint of a supported version")
    cfg = PolicyConfig(**{**doc["config"], "choice_ids": tuple(doc["config"]["choice_ids"])})
    if expect is not None and expect != cfg:
        raise ValueError("checkpoint configuration does not match the expected one")
    shapes = cfg.shapes()
    arrays = {}
    for n in LAYERS:
        hdr = tuple(doc["shapes"][n])
        if hdr != tuple(shapes[n]):
            raise ValueError(f"{n}: header shape {hdr} != expected {shapes[n]}")
        flat = np.asarray(doc["params"][n], dtype=np.float64)
        if flat.size != int(np.prod(hdr)):
            raise ValueError(f"{n}: {flat.size} values for shape {hdr}")
        arrays[n] = flat.reshape(hdr)
    return Params(cfg, arrays), doc.get("extra", {})
