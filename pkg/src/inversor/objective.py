"""Full and progressive search objectives.

The progressive objective scores a candidate on a growing prefix of the
target output: at iteration ``t`` of ``T`` it reveals
``min(floor(m * t / T) + 1, m)`` tokens, reaching the full output at ``t = T``.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Sequence

from .errors import ContractViolation
from .model import LanguageModelBackend, ObjectiveReport

FULL = "full"
PROGRESSIVE = "progressive"


def reveal_index(t: int, T: int, m: int) -> int:
    """Number of target tokens scored at iteration ``t`` (1-based)."""
    if T < 1 or m < 1:
        raise ContractViolation(f"need T >= 1 and m >= 1, got T={T}, m={m}")
    if not 1 <= t <= T:
        raise ContractViolation(f"iteration t={t} outside [1, {T}]")
    return min(m * t // T + 1, m)


@dataclass(frozen=True)
class Schedule:
    mode: str
    total_iterations: int
    output_length: int

    def __post_init__(self):
        if self.mode not in (FULL, PROGRESSIVE):
            raise ContractViolation(f"unknown objective mode {self.mode!r}")
        if self.total_iterations < 1 or self.output_length < 1:
            raise ContractViolation("schedule needs T >= 1 and m >= 1")

    def reveal(self, t: int) -> int:
        if self.mode == FULL:
            if not 1 <= t <= self.total_iterations:
                raise ContractViolation(f"iteration t={t} outside [1, {self.total_iterations}]")
            return self.output_length
        return reveal_index(t, self.total_iterations, self.output_length)


class Budget:
    """Objective-call counter plus optional call, iteration and wall limits.

    The counter is guarded by a lock so concurrent evaluators produce the same
    final count as a sequential run.
    """

    def __init__(self, max_calls: int | None = None, max_iterations: int | None = None,
                 deadline: float | None = None, clock=time.monotonic):
        self.max_calls = max_calls
        self.max_iterations = max_iterations
        self.deadline = deadline
        self._clock = clock
        self._lock = threading.Lock()
        self._calls = 0
        self._started = clock()

    @property
    def objective_calls(self) -> int:
        return self._calls

    def elapsed(self) -> float:
        return self._clock() - self._started

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._calls += n

    def exhausted(self, iterations_done: int = 0) -> bool:
        """Checked between iterations; an iteration in progress always finishes."""
        if self.max_iterations is not None and iterations_done >= self.max_iterations:
            return True
        if self.max_calls is not None and self._calls >= self.max_calls:
            return True
        if self.deadline is not None and self.elapsed() >= self.deadline:
            return True
        return False


class Objective:
    """Scores candidate inputs against one target output.

    Search evaluations go through :meth:`evaluate`/:meth:`evaluate_many`;
    each cache miss costs one objective call. :meth:`full_score` is the
    measurement path (before/after metrics, best-so-far history): it reuses
    search results when available but never charges the budget and never
    feeds the search cache.
    """

    def __init__(self, model: LanguageModelBackend, target: Sequence[int], schedule: Schedule,
                 budget: Budget | None = None, executor=None):
        model.vocab.check(target, "target output")
        if schedule.output_length != len(target):
            raise ContractViolation("schedule output length does not match the target")
        self.model = model
        self.target = tuple(int(t) for t in target)
        self.schedule = schedule
        self.budget = budget if budget is not None else Budget()
        self.executor = executor
        self._cache: dict[tuple, ObjectiveReport] = {}
        self._measured: dict[tuple, ObjectiveReport] = {}
        self._lock = threading.Lock()

    @property
    def m(self) -> int:
        return len(self.target)

    def _key(self, candidate: tuple[int, ...], i: int) -> tuple:
        return (self.model.model_id, i, candidate)

    def evaluate(self, candidate: Sequence[int], t: int) -> ObjectiveReport:
        return self.evaluate_many([candidate], t)[0]

    def evaluate_many(self, candidates: Sequence[Sequence[int]], t: int) -> list[ObjectiveReport]:
        """Score a population at iteration ``t``; cached pairs are free."""
        i = self.schedule.reveal(t)
        return self._score(candidates, i, charge=True)

    def full_score(self, candidate: Sequence[int]) -> ObjectiveReport:
        return self._score([candidate], self.m, charge=False)[0]

    def full_scores(self, candidates: Sequence[Sequence[int]]) -> list[ObjectiveReport]:
        return self._score(candidates, self.m, charge=False)

    def _score(self, candidates, i: int, charge: bool) -> list[ObjectiveReport]:
        keys = [self._key(tuple(int(t) for t in c), i) for c in candidates]
        out: list[ObjectiveReport | None] = [None] * len(keys)
        missing: dict[tuple, list[int]] = {}
        with self._lock:
            for n, key in enumerate(keys):
                hit = self._cache.get(key)
                if hit is None and not charge:
                    hit = self._measured.get(key)
                if hit is not None:
                    out[n] = hit
                else:
                    missing.setdefault(key, []).append(n)
        if missing:
            todo = list(missing)
            for key in todo:
                if not key[2]:
                    raise ContractViolation("candidates must be non-empty")
            prefix = self.target[:i]
            reports = self._run([key[2] for key in todo], prefix)
            with self._lock:
                store = self._cache if charge else self._measured
                for key, rep in zip(todo, reports):
                    store[key] = rep
                    for n in missing[key]:
                        out[n] = rep
            if charge:
                self.budget.add(len(todo))
        return out  # type: ignore[return-value]

    def _run(self, prompts: list[tuple[int, ...]], prefix: tuple[int, ...]) -> list[ObjectiveReport]:
        if self.executor is None or len(prompts) < 2:
            return self.model.score_many(prompts, prefix)
        chunks = max(1, getattr(self.executor, "_max_workers", 1))
        size = -(-len(prompts) // chunks)
        parts = [prompts[k:k + size] for k in range(0, len(prompts), size)]
        results = self.executor.map(lambda p: self.model.score_many(p, prefix), parts)
        return [r for part in results for r in part]
