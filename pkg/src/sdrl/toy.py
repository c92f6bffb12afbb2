"""Desk-scale toy setting: symbolic cooking videos and a fixed training preset."""
from __future__ import annotations

from . import eventflow as ef
from .config import RunConfig, from_dict
from .env import Vocabulary, build_episodes

TOY_FAMILIES = ("Action Order Reasoning (Extreme)", "Temporal Comparison")
TOY_COUNTS = {name: 1500 for name in TOY_FAMILIES}
TOY_CLIP_LEN = 5

# Hyperparameters outside the defaults: a window long enough to see the whole
# written summary, a smaller step size, a format warm-up, and an observation
# channel that occasionally swaps two neighbouring actions.
TOY_OVERRIDES = {"k": 11, "lr": 0.01, "warmup_steps": 300, "steps": 1000, "obs_swap": 0.04}


def toy_config(**kw) -> RunConfig:
    return from_dict({**TOY_OVERRIDES, **kw})


def toy_videos(seed: int = 0):
    return ef.make_toy_annotations(30, 8, 16, seed=seed)


def toy_dataset(seed: int = 0):
    videos = toy_videos(seed)
    lines, manifest = ef.generate_dataset(videos, TOY_COUNTS, seed=seed, clip_len=TOY_CLIP_LEN)
    return videos, lines, manifest


def toy_episodes(cfg: RunConfig, seed: int = 0):
    """``(vocab, train_episodes, val_episodes)`` for the toy dataset."""
    videos, lines, manifest = toy_dataset(seed)
    vocab = Vocabulary.from_dataset(videos, lines)
    train = build_episodes(videos, lines, vocab, manifest["train"], cfg.obs_swap)
    val = build_episodes(videos, lines, vocab, manifest["val"], cfg.obs_swap)
    return vocab, train, val
