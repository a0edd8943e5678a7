"""Language model interface and chain-rule output likelihood."""
from __future__ import annotations

import math
from abc import ABC
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import CapabilityError, ContractViolation

NEG_INF = -math.inf
# Probabilities below this coming over the wire count as exactly zero.
ZERO_PROBABILITY = 1e-45
LOG_ZERO_PROBABILITY = math.log(ZERO_PROBABILITY)


@dataclass(frozen=True)
class Vocabulary:
    """Closed token inventory; ids are integers in ``[0, size)``."""

    size: int
    tokens: tuple[str, ...] | None = None
    special: frozenset[int] = frozenset()
    eos_id: int | None = None

    def __post_init__(self):
        if self.size < 2:
            raise ContractViolation(f"vocabulary size must be >= 2, got {self.size}")
        if self.tokens is not None and len(self.tokens) != self.size:
            raise ContractViolation("rendering table length does not match size")
        if any(not 0 <= t < self.size for t in self.special):
            raise ContractViolation("special token id out of range")

    @cached_property
    def regular_ids(self) -> np.ndarray:
        """Ids usable as search material (special/control tokens excluded)."""
        return np.array([i for i in range(self.size) if i not in self.special], dtype=np.int64)

    @cached_property
    def _index(self) -> dict[str, int]:
        if self.tokens is None:
            return {}
        return {tok: i for i, tok in enumerate(self.tokens)}

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)

    def encode(self, text: str, skip_unknown: bool = False) -> list[int]:
        """Whitespace tokenization against the closed vocabulary."""
        if self.tokens is None:
            raise CapabilityError("vocabulary has no rendering table")
        ids = []
        for word in text.split():
            i = self._index.get(word)
            if i is None:
                if skip_unknown:
                    continue
                raise ContractViolation(f"token {word!r} is not in the vocabulary")
            ids.append(i)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        if self.tokens is None:
            return " ".join(str(int(i)) for i in ids)
        return " ".join(self.tokens[int(i)] for i in ids)

    def check(self, ids: Sequence[int], what: str = "sequence", allow_empty: bool = False):
        if not allow_empty and len(ids) == 0:
            raise ContractViolation(f"{what} must be non-empty")
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise ContractViolation(f"{what} contains token id {i} outside [0, {self.size})")

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "tokens": list(self.tokens) if self.tokens is not None else None,
            "special": sorted(self.special),
            "eos_id": self.eos_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        tokens = d.get("tokens")
        return cls(
            size=int(d["size"]),
            tokens=tuple(tokens) if tokens is not None else None,
            special=frozenset(int(i) for i in d.get("special", ())),
            eos_id=d.get("eos_id"),
        )


@dataclass(frozen=True)
class ObjectiveReport:
    """Log-likelihood of a (possibly partial) output given an input.

    When a scored position has probability zero, ``log_likelihood`` is
    ``-inf`` and ``tokens_scored`` is that position (1-based).
    """

    log_likelihood: float
    tokens_scored: int
    model_calls: int

    @property
    def stopped_early(self) -> bool:
        return self.log_likelihood == NEG_INF


@dataclass(frozen=True)
class Sampling:
    """Decoding settings; ``top_k=0`` and ``top_p=1`` disable truncation."""

    temperature: float = 1.0
    top_p: float = 1.0
    top_k: int = 0
    seed: int = 0

    @property
    def greedy(self) -> bool:
        return self.temperature == 0 or self.top_k == 1

    def with_seed(self, seed: int) -> "Sampling":
        return Sampling(self.temperature, self.top_p, self.top_k, int(seed))


# Target-model decoding settings used by generation-based initializers.
MODEL_SAMPLING = Sampling(temperature=0.7, top_p=0.95, top_k=300)


def sample_next(logprobs: np.ndarray, sampling: Sampling, rng: np.random.Generator) -> int:
    """Draw one token id from a next-token log-distribution."""
    if sampling.greedy:
        return int(np.argmax(logprobs))
    logits = np.asarray(logprobs, dtype=np.float64) / sampling.temperature
    finite = np.isfinite(logits)
    if not finite.any():
        raise ContractViolation("next-token distribution has no support")
    probs = np.zeros_like(logits)
    probs[finite] = np.exp(logits[finite] - logits[finite].max())
    order = np.argsort(-probs, kind="stable")
    ranked = probs[order]
    keep = int(np.count_nonzero(ranked))
    if sampling.top_k > 0:
        keep = min(keep, sampling.top_k)
    if sampling.top_p < 1.0:
        cum = np.cumsum(ranked[:keep]) / ranked[:keep].sum()
        keep = min(keep, int(np.searchsorted(cum, sampling.top_p)) + 1)
    kept = ranked[:keep]
    cum = np.cumsum(kept)
    pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(order[min(pick, keep - 1)])


class LanguageModelBackend(ABC):
    """Abstract language model.

    Subclasses provide at least ``next_token_logprobs`` or override
    ``continuation_logprobs``/``score`` directly (remote backends). All
    scoring methods are read-only, so instances may be shared across threads.
    """

    model_id: str
    vocab: Vocabulary

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} does not expose next-token distributions")

    def continuation_logprobs(self, prompt: Sequence[int], continuation: Sequence[int],
                              early_stop: bool = True) -> tuple[list[float], int | None]:
        """Per-position log-probs of ``continuation`` after ``prompt``.

        Returns ``(logprobs, stopped_at)``; ``stopped_at`` is the 1-based
        position whose probability was zero when ``early_stop`` cut scoring.
        """
        context = list(prompt)
        out = []
        for pos, tok in enumerate(continuation, start=1):
            lp = float(self.next_token_logprobs(context)[tok])
            out.append(lp)
            if lp == NEG_INF and early_stop:
                return out, pos
            context.append(tok)
        return out, None

    def score(self, prompt: Sequence[int], continuation: Sequence[int],
              early_stop: bool = True) -> ObjectiveReport:
        logprobs, stopped_at = self.continuation_logprobs(prompt, continuation, early_stop)
        if stopped_at is not None:
            return ObjectiveReport(NEG_INF, stopped_at, stopped_at)
        total = 0.0
        for lp in logprobs:
            total += lp
        return ObjectiveReport(total, len(logprobs), len(logprobs))

    def score_many(self, prompts: Sequence[Sequence[int]], continuation: Sequence[int],
                   early_stop: bool = True) -> list[ObjectiveReport]:
        return [self.score(p, continuation, early_stop) for p in prompts]

    def generate_tokens(self, prompt: Sequence[int], max_new: int,
                        sampling: Sampling) -> list[int]:
        rng = np.random.default_rng(sampling.seed)
        context = list(prompt)
        out: list[int] = []
        for _ in range(max_new):
            tok = sample_next(self.next_token_logprobs(context), sampling, rng)
            if tok == self.vocab.eos_id:
                break
            out.append(tok)
            context.append(tok)
        return out


def sequence_log_likelihood(model: LanguageModelBackend, input: Sequence[int],
                            output_prefix: Sequence[int]) -> ObjectiveReport:
    """Sum of ``log P(y_i | x y_1..y_{i-1})`` over ``output_prefix``, stopping
    at the first zero-probability position."""
    model.vocab.check(input, "input")
    model.vocab.check(output_prefix, "output prefix")
    return model.score(input, output_prefix, early_stop=True)


def generate(model: LanguageModelBackend, prompt: Sequence[int], max_new: int,
             sampling: Sampling | None = None) -> list[int]:
    """Sample at most ``max_new`` tokens after ``prompt``; stops at end-of-sequence."""
    if max_new < 1:
        raise ContractViolation("max_new must be >= 1")
    model.vocab.check(prompt, "prompt")
    if sampling is None:
        sampling = Sampling()
    return model.generate_tokens(prompt, max_new, sampling)
