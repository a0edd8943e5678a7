"""Text-space genetic algorithm over variable-length token lists.

The loop follows the classic simple GA: tournament selection, uniform
crossover on pairs, per-token mutation, then the offspring replace the
population. One elite is carried over unchanged by default.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigurationError, ContractViolation
from .objective import FULL, Objective
from .search import BestTracker, SearchResult, best_index

REPLACE = "replace"
INSERT = "insert"
DELETE = "delete"
SWAP = "swap"


@dataclass
class GaConfig:
    population_size: int = 1000
    crossover_indpb: float = 0.3
    mutation_indpb: float = 0.1
    tournament_size: int = 15
    # individual-level rates of the simple GA
    crossover_rate: float = 0.5
    mutation_rate: float = 0.5
    elitism: int = 1
    max_len: int = 15
    generations: int = 100
    seed: int = 0

    def validate(self) -> None:
        for name in ("crossover_indpb", "mutation_indpb", "crossover_rate", "mutation_rate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.population_size < 2:
            raise ConfigurationError("population_size must be >= 2")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ConfigurationError("tournament_size must lie in [1, population_size]")
        if not 0 <= self.elitism < self.population_size:
            raise ConfigurationError("elitism must lie in [0, population_size)")
        if self.max_len < 1:
            raise ConfigurationError("max_len must be >= 1")
        if self.generations < 1:
            raise ConfigurationError("generations must be >= 1")


def mutate_logged(individual: Sequence[int], indpb: float, rng: random.Random,
                  token_ids: Sequence[int], max_len: int | None = None) -> tuple[list[int], list[str]]:
    """:func:`mutate` that also returns the list of applied operations."""
    if len(individual) == 0:
        raise ContractViolation("cannot mutate an empty individual")
    out = list(individual)
    ops: list[str] = []
    j = 0
    for _ in range(len(individual)):
        if rng.random() >= indpb:
            j += 1
            continue
        if len(out) > 1:
            choices = [REPLACE, INSERT, DELETE, SWAP]
        else:
            choices = [REPLACE, INSERT]
        if max_len is not None and len(out) >= max_len:
            choices.remove(INSERT)
        op = rng.choice(choices)
        ops.append(op)
        if op == REPLACE:
            out[j] = rng.choice(token_ids)
            j += 1
        elif op == INSERT:
            out.insert(j, rng.choice(token_ids))
            j += 2
        elif op == DELETE:
            del out[j]
        else:
            k = rng.randrange(len(out) - 1)
            if k >= j:
                k += 1
            out[j], out[k] = out[k], out[j]
            j += 1
    return out, ops


def mutate(individual: Sequence[int], indpb: float, rng: random.Random,
           token_ids: Sequence[int], max_len: int | None = None) -> list[int]:
    """Give each token an independent ``indpb`` chance of one mutation.

    The mutation is drawn uniformly from replace, insert-to-the-left, delete
    and swap-with-another-position; a single remaining token can only be
    replaced or have a token inserted. Insertions stop at ``max_len``.
    """
    return mutate_logged(individual, indpb, rng, token_ids, max_len)[0]


def crossover_uniform(a: Sequence[int], b: Sequence[int], indpb: float,
                      rng: random.Random) -> tuple[list[int], list[int]]:
    """Swap each position of the common prefix with probability ``indpb``."""
    if not a or not b:
        raise ContractViolation("crossover needs two non-empty parents")
    c1, c2 = list(a), list(b)
    for i in range(min(len(c1), len(c2))):
        if rng.random() < indpb:
            c1[i], c2[i] = c2[i], c1[i]
    return c1, c2


def select_tournament(scores: Sequence[float | None], k: int, tournament_size: int,
                      rng: random.Random, with_replacement: bool = True) -> list[int]:
    """Return indices of ``k`` tournament winners.

    Aspirants are drawn uniformly with replacement; the best score wins and
    ties go to the lower index. ``with_replacement=False`` draws distinct
    aspirants (with ``tournament_size == len(scores)`` every tournament then
    sees the whole population).
    """
    n = len(scores)
    if any(s is None for s in scores):
        raise ContractViolation("tournament over an unevaluated individual")
    if not 1 <= tournament_size <= n:
        raise ContractViolation("tournament_size must lie in [1, population size]")
    winners = []
    for _ in range(k):
        if with_replacement:
            aspirants = [rng.randrange(n) for _ in range(tournament_size)]
        else:
            aspirants = rng.sample(range(n), tournament_size)
        best = aspirants[0]
        for a in aspirants[1:]:
            if scores[a] > scores[best] or (scores[a] == scores[best] and a < best):
                best = a
        winners.append(best)
    return winners


def run_ga(config: GaConfig, objective: Objective,
           init_population: Sequence[Sequence[int]]) -> SearchResult:
    """Evolve ``init_population`` until the schedule ends or the budget runs out.

    Generation ``t`` is scored at the schedule's reveal index for ``t``. After
    the loop, the final population is scored on the full output and the best
    full-objective candidate seen during the run is returned.
    """
    config.validate()
    n = config.population_size
    if len(init_population) != n:
        raise ContractViolation(f"initial population has {len(init_population)} individuals, "
                                f"expected {n}")
    pop = [tuple(int(t) for t in ind) for ind in init_population]
    vocab = objective.model.vocab
    for ind in pop:
        vocab.check(ind, "individual")
    max_len = max(config.max_len, max(len(ind) for ind in pop))
    token_ids = vocab.regular_ids.tolist()
    rng = random.Random(config.seed)
    budget = objective.budget
    schedule = objective.schedule
    T = schedule.total_iterations

    tracker = BestTracker(objective)
    before = [r.log_likelihood for r in objective.full_scores(pop)]
    b = best_index(before)
    tracker.offer([pop[b]], [before[b]])
    before_tokens, before_score = pop[b], before[b]
    tracker.record(0)

    done = 0
    while done < T and not budget.exhausted(done):
        t = done + 1
        scores = [r.log_likelihood for r in objective.evaluate_many(pop, t)]
        champ = best_index(scores)
        if schedule.mode == FULL:
            tracker.offer([pop[champ]], [scores[champ]])
        else:
            tracker.offer([pop[champ]])
        tracker.record(t)

        elites = sorted(range(n), key=lambda i: (-scores[i], i))[:config.elitism]
        chosen = select_tournament(scores, n, config.tournament_size, rng)
        offspring = [list(pop[i]) for i in chosen]
        for k in range(1, n, 2):
            if rng.random() < config.crossover_rate:
                offspring[k - 1], offspring[k] = crossover_uniform(
                    offspring[k - 1], offspring[k], config.crossover_indpb, rng)
        for k in range(n):
            if rng.random() < config.mutation_rate:
                offspring[k] = mutate(offspring[k], config.mutation_indpb, rng, token_ids, max_len)
        for slot, e in enumerate(elites):
            offspring[n - 1 - slot] = list(pop[e])
        pop = [tuple(o) for o in offspring]
        done += 1

    final = objective.evaluate_many(pop, T)
    tracker.offer(pop, [r.log_likelihood for r in final])
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
