"""Inversion decisions and similarity metrics between a found and an original input."""
from __future__ import annotations

import hashlib
import logging
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InversionScores:
    weak: bool
    exact: bool
    bleu: float
    token_f1: float
    cos_sim: float | None  # None when the embedding provider failed

    def to_dict(self) -> dict:
        return asdict(self)


def weak_inversion(found_score: float, baseline_score: float) -> bool:
    """``P(y | x') >= P(y | x)``, compared in log space."""
    if not math.isfinite(baseline_score):
        raise ValueError("baseline log-likelihood must be finite")
    return found_score >= baseline_score


def exact_inversion(found: Sequence[int], original: Sequence[int]) -> bool:
    return [int(t) for t in found] == [int(t) for t in original]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate_text: str, reference_text: str, max_n: int = 4) -> float:
    """Sentence BLEU with add-one smoothing on zero n-gram matches.

    Precision for order ``n`` is ``matches / total`` when some n-gram
    matches and ``1 / (total + 1)`` otherwise; the geometric mean over
    ``n = 1..4`` is multiplied by the brevity penalty ``exp(1 - r / c)``
    when the candidate is shorter than the reference.
    """
    cand = candidate_text.split()
    ref = reference_text.split()
    if not cand or not ref:
        raise ValueError("BLEU needs non-empty texts")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        c_counts = _ngrams(cand, n)
        r_counts = _ngrams(ref, n)
        total = sum(c_counts.values())
        matches = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        p = matches / total if matches > 0 else 1.0 / (total + 1)
        log_sum += math.log(p)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / max_n)


def token_f1(candidate_text: str, reference_text: str) -> float:
    """F1 over token multisets; overlap counts are capped per side."""
    cand = Counter(candidate_text.split())
    ref = Counter(reference_text.split())
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


class EmbeddingProvider(ABC):
    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Deterministic unit-norm vector of fixed dimension."""


class HashedTrigramEmbedder(EmbeddingProvider):
    """Character-trigram counts hashed into ``dimension`` buckets, normalized."""

    def __init__(self, dimension: int = 256, seed: int = 0):
        self.dimension = dimension
        self._key = f"trigram-{seed}".encode()

    def _bucket(self, gram: str) -> int:
        h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(h, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        padded = f"  {text} "
        vec = np.zeros(self.dimension)
        for i in range(len(padded) - 2):
            vec[self._bucket(padded[i:i + 3])] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def cosine_similarity(candidate_text: str, reference_text: str,
                      provider: EmbeddingProvider) -> float | None:
    """Dot product of the two unit embeddings; ``None`` if the provider fails."""
    try:
        a = np.asarray(provider.embed(candidate_text), dtype=np.float64)
        b = np.asarray(provider.embed(reference_text), dtype=np.float64)
    except Exception as exc:  # provider failures must not abort a trial
        log.warning("embedding provider failed: %s", exc)
        return None
    return float(np.dot(a, b))


def score_inversion(found_tokens: Sequence[int], found_score: float,
                    original_tokens: Sequence[int], baseline_score: float,
                    render, provider: EmbeddingProvider) -> InversionScores:
    """All metrics for one found input; ``render`` maps token ids to text."""
    found_text = render(found_tokens)
    original_text = render(original_tokens)
    return InversionScores(
        weak=weak_inversion(found_score, baseline_score),
        exact=exact_inversion(found_tokens, original_tokens),
        bleu=bleu(found_text, original_text),
        token_f1=token_f1(found_text, original_text),
        cos_sim=cosine_similarity(found_text, original_text, provider),
    )
