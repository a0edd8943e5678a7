"""Initial populations for the GA (token lists) and the PSO (latent vectors)."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .model import MODEL_SAMPLING, LanguageModelBackend, Sampling, Vocabulary, generate

RANDOM = "random"
OUTPUT = "output"
OUTPUT_SYNONYM = "output_synonym"
OUTPUT_PARAPHRASE = "output_paraphrase"
INVERSION = "inversion"
INVERSION_SAMPLE = "inversion_sample"
RANDOM_DATASET = "random_dataset"
RANDOM_FLUENT = "random_fluent"
RANDOM_OUTPUT = "random_output"

KINDS = (RANDOM, OUTPUT, OUTPUT_SYNONYM, OUTPUT_PARAPHRASE, INVERSION, INVERSION_SAMPLE,
         RANDOM_DATASET, RANDOM_FLUENT, RANDOM_OUTPUT)

TOKENS = "tokens"
EMBEDDING = "embedding"

PARAPHRASE_SAMPLING = Sampling(temperature=1.5, top_p=0.99, top_k=500)
INVERSION_GREEDY = Sampling(temperature=0.0)
INVERSION_SAMPLING = Sampling(temperature=1.0, top_p=0.99, top_k=500)


class SynonymLexicon:
    """Word -> synonyms table read from ``word: syn1, syn2`` lines.

    Lookups are case-insensitive; ``#`` starts a comment line.
    """

    def __init__(self, entries: dict[str, list[str]] | None = None):
        self.entries = {k.lower(): list(v) for k, v in (entries or {}).items()}

    @classmethod
    def load(cls, path) -> "SynonymLexicon":
        entries: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                word, sep, rest = line.partition(":")
                if not sep or not word.strip():
                    raise ConfigurationError(f"{path}:{n}: expected 'word: synonym, ...'")
                syns = [s.strip() for s in rest.split(",") if s.strip()]
                entries.setdefault(word.strip().lower(), []).extend(syns)
        return cls(entries)

    def synonyms(self, word: str) -> list[str]:
        return self.entries.get(word.lower(), [])

    def substitute(self, word: str, rng: np.random.Generator) -> str:
        """A random synonym, or the word itself when it has none."""
        syns = self.synonyms(word)
        if not syns:
            return word
        return syns[int(rng.integers(len(syns)))]

    def restricted_to(self, vocab: Vocabulary) -> "SynonymLexicon":
        """Drop synonyms containing words the vocabulary cannot encode."""
        keep = {}
        for word, syns in self.entries.items():
            ok = [s for s in syns if all(vocab.id_of(w) is not None for w in s.split())]
            if ok:
                keep[word] = ok
        return SynonymLexicon(keep)


class CandidateGenerator(ABC):
    """Text-to-text sampler: paraphrasers and inverted models."""

    @abstractmethod
    def generate(self, target_output: str, sampling: Sampling) -> str:
        """Return non-empty text; ``sampling.seed`` fixes the draw."""


class EchoGenerator(CandidateGenerator):
    """Deterministic stand-in: echoes the target, and when sampling appends
    ``suffixes[seed % len(suffixes)]``."""

    def __init__(self, suffixes: Sequence[str] = ()):
        self.suffixes = list(suffixes)

    def generate(self, target_output: str, sampling: Sampling) -> str:
        if sampling.greedy or not self.suffixes:
            return target_output
        return f"{target_output} {self.suffixes[sampling.seed % len(self.suffixes)]}"


@dataclass
class InitStrategy:
    kind: str
    lexicon: SynonymLexicon | None = None
    paraphraser: CandidateGenerator | None = None
    inverter: CandidateGenerator | None = None
    corpus: list[list[int]] | None = None
    model: LanguageModelBackend | None = None
    model_sampling: Sampling = field(default_factory=lambda: MODEL_SAMPLING)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown initialization {self.kind!r}; choose from {KINDS}")

    def require(self) -> None:
        needs = {
            OUTPUT_SYNONYM: ("lexicon", "synonym lexicon"),
            OUTPUT_PARAPHRASE: ("paraphraser", "paraphrase generator"),
            INVERSION: ("inverter", "inverted model"),
            INVERSION_SAMPLE: ("inverter", "inverted model"),
            RANDOM_DATASET: ("corpus", "text corpus"),
            RANDOM_FLUENT: ("model", "generative backend"),
            RANDOM_OUTPUT: ("model", "generative backend"),
        }
        if self.kind in needs:
            attr, label = needs[self.kind]
            if not getattr(self, attr):
                raise ConfigurationError(f"initialization {self.kind!r} needs a {label} ({attr})")


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


def _text_tokens(vocab: Vocabulary, text: str, source: str) -> list[int]:
    ids = vocab.encode(text, skip_unknown=True)
    if not ids:
        raise ContractViolation(f"{source} produced no in-vocabulary tokens: {text!r}")
    return ids


def _token_candidates(strategy: InitStrategy, target: list[int], size: int,
                      rng: np.random.Generator, vocab: Vocabulary, max_len: int) -> list[tuple[int, ...]]:
    kind = strategy.kind
    regular = vocab.regular_ids
    if kind == RANDOM:
        out = []
        for _ in range(size):
            n = int(rng.integers(1, max_len + 1))
            out.append(tuple(int(t) for t in rng.choice(regular, n)))
        return out
    if kind == OUTPUT:
        return [tuple(target)] * size
    if kind == OUTPUT_SYNONYM:
        lex = strategy.lexicon.restricted_to(vocab)
        words = vocab.decode(target).split()
        out = []
        for _ in range(size):
            text = " ".join(lex.substitute(w, rng) for w in words)
            out.append(tuple(vocab.encode(text)))
        return out
    target_text = vocab.decode(target)
    if kind == OUTPUT_PARAPHRASE:
        return [tuple(_text_tokens(vocab, strategy.paraphraser.generate(
            target_text, PARAPHRASE_SAMPLING.with_seed(_seed(rng))), "paraphraser"))
            for _ in range(size)]
    if kind == INVERSION:
        text = strategy.inverter.generate(target_text, INVERSION_GREEDY)
        return [tuple(_text_tokens(vocab, text, "inverted model"))] * size
    if kind == INVERSION_SAMPLE:
        base = _seed(rng)
        return [tuple(_text_tokens(vocab, strategy.inverter.generate(
            target_text, INVERSION_SAMPLING.with_seed(base + k)), "inverted model"))
            for k in range(size)]
    if kind == RANDOM_DATASET:
        lines = [line for line in strategy.corpus if line]
        if not lines:
            raise ConfigurationError("random_dataset corpus has no usable lines")
        return [tuple(lines[int(rng.integers(len(lines)))]) for _ in range(size)]
    if kind == RANDOM_FLUENT:
        out = []
        for _ in range(size):
            first = int(rng.choice(regular))
            rest = []
            if max_len > 1:
                rest = generate(strategy.model, [first], max_len - 1,
                                strategy.model_sampling.with_seed(_seed(rng)))
            out.append((first, *rest))
        return out
    if kind == RANDOM_OUTPUT:
        extra = max(1, max_len - len(target))
        return [tuple(target) + tuple(generate(strategy.model, target, extra,
                                               strategy.model_sampling.with_seed(_seed(rng))))
                for _ in range(size)]
    raise ConfigurationError(f"unknown initialization {kind!r}")


def build_population(strategy: InitStrategy, target_output: Sequence[int], size: int,
                     representation: str, rng: np.random.Generator, *, vocab: Vocabulary,
                     max_len: int = 15, autoencoder=None):
    """``size`` initial candidates for ``target_output``.

    Token mode returns a list of token tuples; embedding mode returns a
    ``(size, d)`` array of latent positions in ``[-1, 1]^d``.
    """
    if size < 1:
        raise ContractViolation("population size must be >= 1")
    if representation not in (TOKENS, EMBEDDING):
        raise ContractViolation(f"unknown representation {representation!r}")
    strategy.require()
    target = [int(t) for t in target_output]
    vocab.check(target, "target output")
    if representation == EMBEDDING:
        if autoencoder is None:
            raise ConfigurationError("embedding initialization needs an autoencoder")
        if strategy.kind == RANDOM:
            return rng.uniform(-1.0, 1.0, size=(size, autoencoder.dimension))
        cands = _token_candidates(strategy, target, size, rng, vocab, max_len)
        encoded: dict[tuple[int, ...], np.ndarray] = {}
        rows = []
        for c in cands:
            if c not in encoded:
                encoded[c] = np.clip(autoencoder.encode(c), -1.0, 1.0)
            rows.append(encoded[c])
        return np.array(rows)
    return _token_candidates(strategy, target, size, rng, vocab, max_len)


def load_token_corpus(path, vocab: Vocabulary) -> list[list[int]]:
    """Corpus lines tokenized against ``vocab``; unknown words are dropped."""
    with open(Path(path), encoding="utf-8") as f:
        lines = [vocab.encode(line, skip_unknown=True) for line in f if line.strip()]
    return [line for line in lines if line]
