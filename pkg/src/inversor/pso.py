"""Embedding-space particle swarm optimization.

Particles live in the box ``[-1, 1]^d`` of a text autoencoder's latent space
and are decoded to token sequences for scoring. The update is the plain
two-attractor rule with per-component velocity clamping; no inertia weight.
"""
from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .model import Sampling, Vocabulary, sample_next
from .objective import FULL, Objective
from .search import BestTracker, SearchResult, best_index

BOUND = 1.0


class TextAutoencoder(ABC):
    """Bridge between token sequences and vectors in ``[-1, 1]^d``."""

    dimension: int

    @abstractmethod
    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        ...

    @abstractmethod
    def decode(self, vector: np.ndarray, max_len: int, sampling: Sampling) -> list[int]:
        """Return between 1 and ``max_len`` token ids."""


class ToyAutoencoder(TextAutoencoder):
    """Bag-of-tokens autoencoder built on a seeded random projection.

    ``encode`` squashes the projected token-count vector with ``tanh``.
    ``decode`` inverts the squashing and greedily picks the token whose
    projection most reduces the squared residual, stopping when no token
    helps. With a positive temperature the pick is sampled instead.
    """

    def __init__(self, vocab: Vocabulary, dimension: int = 512, seed: int = 0):
        if dimension < 1:
            raise ConfigurationError("dimension must be >= 1")
        self.vocab = vocab
        self.dimension = dimension
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((vocab.size, dimension)) / np.sqrt(dimension)
        self._ids = vocab.regular_ids
        self._rows = self.projection[self._ids]
        self._norms = np.einsum("ij,ij->i", self._rows, self._rows)

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        counts = np.bincount(np.asarray(tokens, dtype=np.int64), minlength=self.vocab.size)
        return np.tanh(counts.astype(np.float64) @ self.projection)

    def decode(self, vector: np.ndarray, max_len: int, sampling: Sampling) -> list[int]:
        if max_len < 1:
            raise ContractViolation("max_len must be >= 1")
        v = np.clip(np.asarray(vector, dtype=np.float64), -1 + 1e-9, 1 - 1e-9)
        residual = np.arctanh(v)
        rng = np.random.default_rng(sampling.seed)
        out: list[int] = []
        for _ in range(max_len):
            gain = 2.0 * (self._rows @ residual) - self._norms
            top = int(np.argmax(gain))
            if gain[top] <= 0.0 and out:
                break
            if sampling.greedy or gain[top] <= 0.0:
                k = top
            else:
                # only improving tokens have support
                support = np.flatnonzero(gain > 0.0)
                k = int(support[sample_next(gain[support] / gain[top], sampling, rng)])
            out.append(int(self._ids[k]))
            residual = residual - self._rows[k]
        return out


@dataclass
class PsoConfig:
    swarm_size: int = 500
    phi1: float = 2.0
    phi2: float = 2.0
    velocity_clamp: float = 0.5
    dimension: int = 512
    max_sample_len: int = 64
    iterations: int = 100
    decode_temperature: float = 1.0
    decode_top_p: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if not (self.phi1 > 0 and self.phi2 > 0):
            raise ConfigurationError("phi1 and phi2 must be > 0")
        if self.swarm_size < 2:
            raise ConfigurationError("swarm_size must be >= 2")
        if not self.velocity_clamp > 0:
            raise ConfigurationError("velocity_clamp must be > 0")
        if self.max_sample_len < 1 or self.iterations < 1:
            raise ConfigurationError("max_sample_len and iterations must be >= 1")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_score: float
    tokens: tuple[int, ...] = ()


def update_velocity(velocity, position, personal_best, global_best, phi1, phi2, clamp, u1, u2):
    v = velocity + u1 * phi1 * (personal_best - position) + u2 * phi2 * (global_best - position)
    return np.clip(v, -clamp, clamp)


def update_position(position, velocity):
    return np.clip(position + velocity, -BOUND, BOUND)


def pso_step(particle: Particle, global_best_position: np.ndarray, config: PsoConfig,
             rng: np.random.Generator, decoder: Callable[[np.ndarray], Sequence[int]] | None = None,
             u1: np.ndarray | None = None, u2: np.ndarray | None = None) -> Particle:
    """One velocity/position update; ``u1``/``u2`` default to fresh uniforms."""
    d = particle.position.shape[0]
    if u1 is None:
        u1 = rng.random(d)
    if u2 is None:
        u2 = rng.random(d)
    v = update_velocity(particle.velocity, particle.position, particle.best_position,
                        global_best_position, config.phi1, config.phi2,
                        config.velocity_clamp, u1, u2)
    x = update_position(particle.position, v)
    tokens = tuple(decoder(x)) if decoder is not None else particle.tokens
    return replace(particle, position=x, velocity=v, tokens=tokens)


class _Decoder:
    """Decodes positions, memoized by the exact position bytes."""

    def __init__(self, autoencoder: TextAutoencoder, config: PsoConfig):
        self.autoencoder = autoencoder
        self.config = config
        self.cache: dict[bytes, tuple[int, ...]] = {}

    def __call__(self, x: np.ndarray) -> tuple[int, ...]:
        key = np.ascontiguousarray(x, dtype=np.float64).tobytes()
        hit = self.cache.get(key)
        if hit is None:
            digest = hashlib.blake2b(key, digest_size=8, key=str(self.config.seed).encode())
            sampling = Sampling(self.config.decode_temperature, self.config.decode_top_p, 0,
                                int.from_bytes(digest.digest(), "little") >> 1)
            hit = tuple(self.autoencoder.decode(x, self.config.max_sample_len, sampling))
            if not hit:
                raise ContractViolation("autoencoder decoded an empty sequence")
            self.cache[key] = hit
        return hit


def run_pso(config: PsoConfig, objective: Objective, autoencoder: TextAutoencoder,
            init_positions: np.ndarray) -> SearchResult:
    """Swarm search until the schedule ends or the budget runs out.

    Personal and global bests are compared at the current reveal index only;
    the personal bests are re-scored whenever the index grows.
    """
    config.validate()
    X = np.array(init_positions, dtype=np.float64)
    if X.shape != (config.swarm_size, autoencoder.dimension):
        raise ContractViolation(f"initial positions have shape {X.shape}, expected "
                                f"{(config.swarm_size, autoencoder.dimension)}")
    if np.any(np.abs(X) > BOUND):
        raise ContractViolation("initial positions must lie in [-1, 1]^d")
    rng = np.random.default_rng(config.seed)
    c = config.velocity_clamp
    V = rng.uniform(-c, c, size=X.shape)
    decode = _Decoder(autoencoder, config)
    budget = objective.budget
    schedule = objective.schedule
    T = schedule.total_iterations

    tokens = [decode(x) for x in X]
    tracker = BestTracker(objective)
    before = [r.log_likelihood for r in objective.full_scores(tokens)]
    b = best_index(before)
    tracker.offer([tokens[b]], [before[b]])
    before_tokens, before_score = tokens[b], before[b]
    tracker.record(0)

    P = X.copy()
    p_tokens = list(tokens)
    done = 0
    while done < T and not budget.exhausted(done):
        t = done + 1
        scores = [r.log_likelihood for r in objective.evaluate_many(tokens, t)]
        p_scores = [r.log_likelihood for r in objective.evaluate_many(p_tokens, t)]
        for k in range(config.swarm_size):
            if scores[k] > p_scores[k]:
                P[k] = X[k]
                p_tokens[k] = tokens[k]
                p_scores[k] = scores[k]
        g = best_index(p_scores)
        if schedule.mode == FULL:
            tracker.offer([p_tokens[g]], [p_scores[g]])
        else:
            tracker.offer([p_tokens[g]])
        tracker.record(t)

        u1 = rng.random(X.shape)
        u2 = rng.random(X.shape)
        V = update_velocity(V, X, P, P[g], config.phi1, config.phi2, c, u1, u2)
        X = update_position(X, V)
        tokens = [decode(x) for x in X]
        done += 1

    final = tokens + p_tokens
    tracker.offer(final, [r.log_likelihood for r in objective.evaluate_many(final, T)])
    tracker.record(done)
    return SearchResult(
        best_tokens=tracker.tokens,
        best_score=tracker.score,
        before_tokens=before_tokens,
        before_score=before_score,
        iterations=done,
        objective_calls=budget.objective_calls,
        history=tracker.history,
    )
