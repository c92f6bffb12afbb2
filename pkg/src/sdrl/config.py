"""Run configuration: every hyperparameter, validated, JSON round-trippable."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .metrics import SimilarityWeights
from .objective import ObjectiveConfig
from .rewards import MODES, RewardConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # summary similarity and rewards
    alpha: float = 0.7
    beta: float = 0.3
    gamma1: float = 1.0
    gamma2: float = 1.0
    format_weight: float = 0.5
    mode: str = "self-supervised"
    # token weights
    lam: float = 0.5
    lam_prime: float = 0.7
    cvk_on: bool = True
    dvr_on: bool = True
    dynamic_on: bool = True
    metric: str = "entropy"
    # objective
    G: int = 8
    clip_eps: float = 0.2
    kl_coeff: float = 0.04
    eps_std: float = 1e-4
    inner_epochs: int = 1
    # optimiser
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    max_grad_norm: float = 0.0
    # policy
    d: int = 32
    d_h: int = 64
    k: int = 8
    max_len: int = 16
    # environment
    obs_swap: float = 0.0
    # run
    seed: int = 0
    steps: int = 1000
    batch_prompts: int = 8
    warmup_steps: int = 0
    warmup_batch: int = 16
    warmup_noise: float = 0.3
    eval_every: int = 0
    eval_limit: int = 0
    checkpoint_every: int = 0
    # similarity backend
    ngram_order: int = 3
    bleu_max_n: int = 4
    embed_mode: str = "ngram-cosine"
    embed_url: str = ""

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            want = {"float": (int, float), "int": int, "bool": bool, "str": str}[f.type]
            if (f.type != "bool" and isinstance(v, bool)) or not isinstance(v, want):
                raise ConfigError(f"{f.name} must be of type {f.type}")
            if f.type == "float":
                object.__setattr__(self, f.name, float(v))
        try:
            SimilarityWeights(self.alpha, self.beta)
            RewardConfig(self.gamma1, self.gamma2, self.format_weight, self.mode)
            ObjectiveConfig(self.clip_eps, self.kl_coeff, self.G, self.eps_std)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        checks = [
            (0 <= self.lam <= 1, "lam must lie in [0, 1]"),
            (self.lam_prime >= 0, "lam_prime must be nonnegative"),
            (self.metric in ("kl", "entropy"), "metric must be 'kl' or 'entropy'"),
            (self.mode in MODES, f"mode must be one of {MODES}"),
            (self.optimizer in ("sgd", "adam"), "optimizer must be 'sgd' or 'adam'"),
            (self.lr > 0, "lr must be positive"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.max_grad_norm >= 0, "max_grad_norm must be nonnegative"),
            (min(self.d, self.d_h, self.k) >= 1, "d, d_h and k must be positive"),
            (self.max_len >= 8, "max_len must be >= 8"),
            (self.steps >= 0 and self.warmup_steps >= 0, "step counts must be nonnegative"),
            (self.batch_prompts >= 1 and self.warmup_batch >= 1, "batch sizes must be positive"),
            (0 <= self.warmup_noise <= 1, "warmup_noise must lie in [0, 1]"),
            (0 <= self.obs_swap <= 1, "obs_swap must lie in [0, 1]"),
            (self.inner_epochs >= 1, "inner_epochs must be >= 1"),
            (min(self.eval_every, self.eval_limit, self.checkpoint_every) >= 0, "intervals must be >= 0"),
            (self.ngram_order >= 1 and self.bleu_max_n >= 1, "n-gram orders must be >= 1"),
            (self.embed_mode in ("ngram-cosine", "external-service"), "unknown embed_mode"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def sim_weights(self) -> SimilarityWeights:
        return SimilarityWeights(self.alpha, self.beta)

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(self.gamma1, self.gamma2, self.format_weight, self.mode)

    @property
    def objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.clip_eps, self.kl_coeff, self.G, self.eps_std)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, **kw) -> RunConfig:
        return from_dict({**self.to_dict(), **kw})

    def plain_grpo(self) -> RunConfig:
        return replace(self, cvk_on=False, dvr_on=False, gamma2=0.0)


def from_dict(doc: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**doc)


def load_config(path) -> RunConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path} at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return from_dict(doc)


def parse_override(text: str):
    """``key=value`` with the value decoded as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key, val
