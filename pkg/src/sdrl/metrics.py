"""Summary similarity: sentence BLEU, an embedding provider and their blend."""
from __future__ import annotations

import json
import math
import os
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EMBED_URL_ENV = "SDRL_EMBED_URL"


def ngrams(seq: Sequence, n: int) -> Counter:
    seq = tuple(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def bleu(candidate: Sequence, reference: Sequence, max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing on orders above one."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if len(reference) == 0:
        raise ValueError("BLEU is undefined for an empty reference")
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cand, ref = ngrams(candidate, n), ngrams(reference, n)
        match = sum(min(k, ref[g]) for g, k in cand.items())
        total = max(c - n + 1, 0)
        if n > 1:
            match, total = match + 1, total + 1
        if match == 0:
            return 0.0
        log_p += math.log(match / total)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_p / max_n))


@dataclass(frozen=True)
class SimilarityWeights:
    alpha: float = 0.7
    beta: float = 0.3

    def __post_init__(self):
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("similarity weights must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError("alpha + beta must equal 1")


class EmbeddingServiceError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingProvider:
    """Semantic similarity backend.

    ``ngram-cosine`` compares bags of all n-grams up to ``ngram_order``.
    ``external-service`` posts rendered texts to ``{url}/embed``.
    """
    mode: str = "ngram-cosine"
    ngram_order: int = 3
    url: str | None = None
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.2

    def __post_init__(self):
        if self.mode not in ("ngram-cosine", "external-service"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if self.ngram_order < 1:
            raise ValueError("ngram_order must be >= 1")

    def base_url(self) -> str:
        url = self.url or os.environ.get(EMBED_URL_ENV)
        if not url:
            raise EmbeddingServiceError(f"no service URL (set {EMBED_URL_ENV})")
        return url.rstrip("/")

    def embed(self, texts: list[str]) -> np.ndarray:
        body = json.dumps({"texts": texts}).encode()
        last = None
        for attempt in range(self.retries):
            req = urllib.request.Request(self.base_url() + "/embed", data=body,
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    vecs = json.loads(resp.read())["vectors"]
                arr = np.asarray(vecs, dtype=np.float64)
                if arr.ndim != 2 or arr.shape[0] != len(texts) or not np.isfinite(arr).all():
                    raise ValueError("malformed vectors")
                return arr
            except (urllib.error.URLError, OSError, ValueError, KeyError, TypeError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise EmbeddingServiceError(f"embedding service failed after {self.retries} attempts: {last}")


def render(seq: Sequence) -> str:
    return " ".join(str(t) for t in seq)


def _bag(seq, order):
    bag = Counter()
    for n in range(1, order + 1):
        bag.update(ngrams(seq, n))
    return bag


def _cos(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), 0.0, 1.0))


def semantic_sim(a: Sequence, b: Sequence, provider: EmbeddingProvider | None = None) -> float:
    provider = provider or EmbeddingProvider()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("semantic similarity needs nonempty sequences")
    if provider.mode == "external-service":
        u, v = provider.embed([render(a), render(b)])
        return _cos(u, v)
    if tuple(a) == tuple(b):
        return 1.0
    ba, bb = _bag(a, provider.ngram_order), _bag(b, provider.ngram_order)
    dot = sum(k * bb[g] for g, k in ba.items())
    na = math.sqrt(sum(k * k for k in ba.values()))
    nb = math.sqrt(sum(k * k for k in bb.values()))
    return min(1.0, max(0.0, dot / (na * nb)))


def composite_sim(candidate: Sequence, reference: Sequence,
                  w: SimilarityWeights | None = None,
                  provider: EmbeddingProvider | None = None, max_n: int = 4) -> float:
    w = w or SimilarityWeights()
    if len(candidate) == 0:
        return 0.0
    return w.alpha * semantic_sim(candidate, reference, provider) + w.beta * bleu(candidate, reference, max_n)
