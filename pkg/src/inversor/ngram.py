"""Deterministic built-in language model.

An additive-smoothed n-gram model, optionally interpolated with an induction
copy component: when the previous token already occurred in the history, part
of the mass goes to the tokens that followed it there. The copy component is
what lets a prompt "jailbreak" the toy model into repeating text, which the
output-copy initializations rely on.

    P(tok | h) = (1 - w) * P_ngram(tok | ctx) + w * P_copy(tok | h)

with ``P_ngram(tok | ctx) = (count(ctx, tok) + alpha) / (count(ctx, .) + alpha * |V|)``.
When the previous token has no earlier occurrence, ``P = P_ngram``.
"""
from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractViolation
from .model import NEG_INF, LanguageModelBackend, ObjectiveReport, Vocabulary

BOS = -1
EOS_TOKEN = "</s>"
FORMAT = "inversor-ngram"
FORMAT_VERSION = 1

# Settings of the model behind the shipped toy benchmark.
TOY_ORDER = 2
TOY_ALPHA = 0.1
TOY_COPY_WEIGHT = 0.5


class NGramModel(LanguageModelBackend):
    """Immutable after construction; safe to share between threads."""

    def __init__(self, vocab: Vocabulary, order: int = 2, alpha: float = 1.0,
                 counts: dict[tuple[int, ...], dict[int, int]] | None = None,
                 copy_weight: float = 0.0, hard_zero: Iterable[int] = (),
                 model_id: str | None = None):
        if order < 1:
            raise ConfigurationError("order must be >= 1")
        if not alpha > 0:
            raise ConfigurationError("alpha must be > 0")
        if not 0.0 <= copy_weight < 1.0:
            raise ConfigurationError("copy_weight must lie in [0, 1)")
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        self.copy_weight = float(copy_weight)
        self.hard_zero = frozenset(int(t) for t in hard_zero)
        if len(self.hard_zero) >= vocab.size:
            raise ConfigurationError("at least one token must keep non-zero probability")
        vocab.check(sorted(self.hard_zero), "hard-zero list", allow_empty=True)
        self.counts = {tuple(ctx): dict(row) for ctx, row in (counts or {}).items()}
        self._model_id = model_id

    # -- identity -----------------------------------------------------------

    @cached_property
    def model_id(self) -> str:
        if self._model_id:
            return self._model_id
        digest = hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
        return f"ngram{self.order}-{digest[:12]}"

    # -- probabilities ------------------------------------------------------

    @cached_property
    def zero_mask(self) -> np.ndarray:
        mask = np.zeros(self.vocab.size, dtype=np.uint8)
        for t in self.hard_zero:
            mask[t] = 1
        return mask

    def _denominator(self, row: dict[int, int]) -> float:
        seen = 0
        for tok, c in row.items():
            if tok not in self.hard_zero:
                seen += c
        return float(seen) + self.alpha * float(self.vocab.size - len(self.hard_zero))

    def ngram_probs(self, ctx: tuple[int, ...]) -> np.ndarray:
        """Smoothed n-gram distribution for an exact context tuple."""
        row = self.counts.get(ctx, {})
        num = np.full(self.vocab.size, self.alpha)
        for tok, c in row.items():
            num[tok] = float(c) + self.alpha
        probs = num / self._denominator(row)
        probs[self.zero_mask.astype(bool)] = 0.0
        return probs

    def _context_of(self, history: Sequence[int]) -> tuple[int, ...]:
        n = self.order - 1
        if n == 0:
            return ()
        tail = [int(t) for t in history[-n:]] if len(history) else []
        return tuple([BOS] * (n - len(tail)) + tail)

    @cached_property
    def table(self) -> np.ndarray:
        """Dense ``(|V| + 1, |V|)`` table indexed by previous token; the last
        row is the begin-of-sequence context. Only for order <= 2."""
        if self.order > 2:
            raise ContractViolation("dense table only exists for order <= 2")
        size = self.vocab.size
        table = np.empty((size + 1, size), dtype=np.float64)
        if self.order == 1:
            table[:] = self.ngram_probs(())
        else:
            for prev in range(size):
                table[prev] = self.ngram_probs((prev,))
            table[size] = self.ngram_probs((BOS,))
        table.setflags(write=False)
        return table

    def _copy_probs(self, history: Sequence[int]) -> np.ndarray | None:
        if self.copy_weight <= 0.0 or len(history) < 2:
            return None
        prev = history[-1]
        succ = np.zeros(self.vocab.size, dtype=np.int64)
        total = 0
        for j in range(len(history) - 1):
            if history[j] == prev:
                s = history[j + 1]
                if s not in self.hard_zero:
                    succ[s] += 1
                    total += 1
        if total == 0:
            return None
        return succ.astype(np.float64) / float(total)

    def next_token_probs(self, context: Sequence[int]) -> np.ndarray:
        history = [int(t) for t in context]
        if self.order <= 2 and history:
            probs = np.array(self.table[history[-1]])
        else:
            probs = self.ngram_probs(self._context_of(history))
        copy = self._copy_probs(history)
        if copy is not None:
            probs = (1.0 - self.copy_weight) * probs + self.copy_weight * copy
        return probs

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.next_token_probs(context))

    # -- scoring (kernel-backed for order <= 2) -----------------------------

    def continuation_logprobs(self, prompt, continuation, early_stop=True):
        if self.order > 2:
            return super().continuation_logprobs(prompt, continuation, early_stop)
        history = np.fromiter((int(t) for t in (*prompt, *continuation)), dtype=np.int64)
        out = np.empty(len(continuation), dtype=np.float64)
        _, scored, stopped = kernels.score_continuation(
            self.table, self.zero_mask, self.copy_weight, history,
            len(prompt), len(continuation), early_stop, out)
        return out[:scored].tolist(), (scored if stopped else None)

    def score(self, prompt, continuation, early_stop=True) -> ObjectiveReport:
        if self.order > 2:
            return super().score(prompt, continuation, early_stop)
        history = np.fromiter((int(t) for t in (*prompt, *continuation)), dtype=np.int64)
        out = np.empty(len(continuation), dtype=np.float64)
        total, scored, _ = kernels.score_continuation(
            self.table, self.zero_mask, self.copy_weight, history,
            len(prompt), len(continuation), early_stop, out)
        return ObjectiveReport(float(total), int(scored), int(scored))

    def score_many(self, prompts, continuation, early_stop=True) -> list[ObjectiveReport]:
        if self.order > 2 or not prompts:
            return super().score_many(prompts, continuation, early_stop)
        lengths = np.fromiter((len(p) for p in prompts), dtype=np.int64, count=len(prompts))
        offsets = np.zeros(len(prompts) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        flat = np.fromiter((int(t) for p in prompts for t in p), dtype=np.int64,
                           count=int(offsets[-1]))
        cont = np.asarray(continuation, dtype=np.int64)
        totals, scored = kernels.score_batch(
            self.table, self.zero_mask, self.copy_weight, flat, offsets, cont,
            len(cont), early_stop)
        return [ObjectiveReport(float(t), int(s), int(s)) for t, s in zip(totals, scored)]

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        rows = []
        for ctx in sorted(self.counts):
            for tok in sorted(self.counts[ctx]):
                rows.append([list(ctx), tok, self.counts[ctx][tok]])
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "order": self.order,
            "alpha": self.alpha,
            "copy_weight": self.copy_weight,
            "hard_zero": sorted(self.hard_zero),
            "vocabulary": self.vocab.to_dict(),
            "counts": rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NGramModel":
        if d.get("format") != FORMAT:
            raise ConfigurationError(f"not an n-gram model file (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported model file version {d.get('version')!r}")
        counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(dict)
        for ctx, tok, c in d["counts"]:
            counts[tuple(ctx)][int(tok)] = int(c)
        return cls(Vocabulary.from_dict(d["vocabulary"]), order=d["order"], alpha=d["alpha"],
                   counts=dict(counts), copy_weight=d.get("copy_weight", 0.0),
                   hard_zero=d.get("hard_zero", ()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NGramModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _split(line) -> list[str]:
    return line.split() if isinstance(line, str) else [str(t) for t in line]


def train_from_corpus(lines: Sequence, order: int = 2, alpha: float = 1.0,
                      hard_zero_tokens: Iterable = (), copy_weight: float = 0.0) -> NGramModel:
    """Count n-grams over ``lines`` (strings or token lists).

    The vocabulary is ``</s>`` (id 0) followed by the sorted corpus words.
    Each line is padded with ``order - 1`` begin markers and one ``</s>``.
    """
    docs = [_split(line) for line in lines]
    docs = [d for d in docs if d]
    if not docs:
        raise ConfigurationError("cannot train on an empty corpus")
    if order < 1:
        raise ConfigurationError("order must be >= 1")
    words = sorted({w for d in docs for w in d} - {EOS_TOKEN})
    tokens = (EOS_TOKEN, *words)
    vocab = Vocabulary(size=len(tokens), tokens=tokens, special=frozenset({0}), eos_id=0)
    index = {w: i for i, w in enumerate(tokens)}
    counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(lambda: defaultdict(int))
    n = order - 1
    for d in docs:
        seq = [BOS] * n + [index[w] for w in d] + [0]
        for pos in range(n, len(seq)):
            counts[tuple(seq[pos - n:pos])][seq[pos]] += 1
    zero = []
    for t in hard_zero_tokens:
        if isinstance(t, str):
            if t not in index:
                raise ConfigurationError(f"hard-zero token {t!r} not in vocabulary")
            zero.append(index[t])
        else:
            zero.append(int(t))
    return NGramModel(vocab, order=order, alpha=alpha,
                      counts={k: dict(v) for k, v in counts.items()},
                      copy_weight=copy_weight, hard_zero=zero)


def data_path(name: str) -> Path:
    return Path(str(resources.files("inversor") / "data" / name))


def load_corpus(path=None) -> list[str]:
    """UTF-8 plain text, one document per line; blank lines skipped."""
    path = data_path("corpus.txt") if path is None else Path(path)
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def toy_model(corpus=None, order: int = TOY_ORDER, alpha: float = TOY_ALPHA,
              copy_weight: float = TOY_COPY_WEIGHT, hard_zero_tokens: Iterable = ()) -> NGramModel:
    """The model behind the shipped toy benchmark."""
    return train_from_corpus(load_corpus(corpus), order=order, alpha=alpha,
                             hard_zero_tokens=hard_zero_tokens, copy_weight=copy_weight)


__all__ = ["NGramModel", "train_from_corpus", "load_corpus", "toy_model", "data_path",
           "BOS", "EOS_TOKEN", "NEG_INF"]
