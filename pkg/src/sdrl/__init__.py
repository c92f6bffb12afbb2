"""Summary-driven reinforcement learning on symbolic temporal QA.

Structured Summary/Think/Answer trajectories, token-weighted group-relative
policy optimisation with consistency and diversity weights, a template
dataset generator and a small NumPy policy to train on it.
"""
from __future__ import annotations

from .config import RunConfig, load_config
from .trajectory import SampleGroup, StructuredTrajectory, VocabSpec, segment

__all__ = ["RunConfig", "SampleGroup", "StructuredTrajectory", "VocabSpec", "load_config", "segment"]
__version__ = "0.1.0"
