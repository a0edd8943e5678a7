"""Bookkeeping shared by the GA and PSO loops."""
from __future__ import annotations

from dataclasses import dataclass, field

from .model import NEG_INF
from .objective import Objective


@dataclass
class HistoryPoint:
    iteration: int
    objective_calls: int
    best_score: float
    elapsed: float


@dataclass
class SearchResult:
    """Outcome of one search run; scores are full-output log-likelihoods."""

    best_tokens: tuple[int, ...]
    best_score: float
    before_tokens: tuple[int, ...]
    before_score: float
    iterations: int
    objective_calls: int
    history: list[HistoryPoint] = field(default_factory=list)


class BestTracker:
    """Running best candidate under the full objective."""

    def __init__(self, objective: Objective):
        self.objective = objective
        self.tokens: tuple[int, ...] = ()
        self.score = NEG_INF
        self.history: list[HistoryPoint] = []

    def offer(self, candidates, scores=None) -> None:
        """Consider candidates; ``scores`` must be full-output scores if given."""
        if scores is None:
            scores = [r.log_likelihood for r in self.objective.full_scores(candidates)]
        for cand, s in zip(candidates, scores):
            # ties keep the earlier candidate
            if not self.tokens or s > self.score:
                self.tokens = tuple(int(t) for t in cand)
                self.score = s

    def record(self, iteration: int) -> None:
        budget = self.objective.budget
        self.history.append(HistoryPoint(iteration, budget.objective_calls, self.score,
                                         budget.elapsed()))


def best_index(scores) -> int:
    """Index of the highest score; lowest index wins ties."""
    best = 0
    for n in range(1, len(scores)):
        if scores[n] > scores[best]:
            best = n
    return best
