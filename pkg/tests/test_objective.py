import itertools
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from inversor.errors import ContractViolation
from inversor.harness import load_dataset
from inversor.model import NEG_INF, sequence_log_likelihood
from inversor.ngram import data_path, toy_model
from inversor.objective import FULL, PROGRESSIVE, Budget, Objective, Schedule, reveal_index


@pytest.mark.parametrize("t,T,m,i", [(1, 10, 5, 1), (5, 10, 5, 3), (10, 10, 5, 5), (3, 3, 1, 1),
                                     (1, 1, 7, 7), (9, 10, 5, 5), (2, 4, 100, 51)])
def test_reveal_index_values(t, T, m, i):
    assert reveal_index(t, T, m) == i


def test_reveal_index_out_of_range():
    for bad in [(0, 10, 5), (11, 10, 5), (1, 0, 5), (1, 5, 0)]:
        with pytest.raises(ContractViolation):
            reveal_index(*bad)


def test_schedule_modes():
    assert [Schedule(FULL, 4, 6).reveal(t) for t in range(1, 5)] == [6, 6, 6, 6]
    assert [Schedule(PROGRESSIVE, 4, 6).reveal(t) for t in range(1, 5)] == [2, 4, 5, 6]
    with pytest.raises(ContractViolation):
        Schedule("partial", 4, 6)


@pytest.fixture(scope="module")
def instance(toy):
    inst = load_dataset(data_path("toy_benchmark.jsonl"))[0]
    return toy.vocab.encode(inst.input_text), toy.vocab.encode(inst.output_text), inst


def test_progressive_at_last_iteration_equals_full(toy, instance):
    x, y, _ = instance
    T = 7
    full = Objective(toy, y, Schedule(FULL, T, len(y))).evaluate(x, 1)
    prog = Objective(toy, y, Schedule(PROGRESSIVE, T, len(y))).evaluate(x, T)
    assert prog == full


def test_progressive_is_upper_bound(toy, instance):
    x, y, _ = instance
    rng = np.random.default_rng(0)
    T = 9
    obj = Objective(toy, y, Schedule(PROGRESSIVE, T, len(y)))
    for _ in range(20):
        cand = rng.choice(toy.vocab.regular_ids, 6).tolist()
        full = obj.full_score(cand).log_likelihood
        for t in range(1, T + 1):
            assert obj.evaluate(cand, t).log_likelihood >= full


def test_first_token_zero_probability_both_modes():
    m = toy_model(hard_zero_tokens=["fox"])
    y = m.vocab.encode("fox ran away")
    for mode in (FULL, PROGRESSIVE):
        rep = Objective(m, y, Schedule(mode, 5, 3)).evaluate(m.vocab.encode("the"), 1)
        assert rep.log_likelihood == NEG_INF and rep.tokens_scored == 1


def test_planted_input_scores_the_recorded_baseline(toy, instance):
    x, y, inst = instance
    rep = Objective(toy, y, Schedule(FULL, 1, len(y))).evaluate(x, 1)
    assert rep.log_likelihood == inst.baseline_logprob
    assert rep.log_likelihood == sequence_log_likelihood(toy, x, y).log_likelihood


def test_calls_counted_once_per_distinct_candidate(toy, instance):
    x, y, _ = instance
    obj = Objective(toy, y, Schedule(PROGRESSIVE, 10, len(y)))
    obj.evaluate_many([x, x, [5], x], 1)
    assert obj.budget.objective_calls == 2
    obj.evaluate(x, 1)  # cached
    assert obj.budget.objective_calls == 2
    obj.evaluate(x, 10)  # new reveal index
    assert obj.budget.objective_calls == 3
    obj.full_score([9, 9])  # measurement only
    assert obj.budget.objective_calls == 3


def test_empty_candidate_rejected(toy, instance):
    _, y, _ = instance
    with pytest.raises(ContractViolation):
        Objective(toy, y, Schedule(FULL, 1, len(y))).evaluate([], 1)


def test_concurrent_evaluation_same_results_and_count(toy, instance):
    _, y, _ = instance
    rng = np.random.default_rng(1)
    pop = [tuple(rng.choice(toy.vocab.regular_ids, int(rng.integers(1, 15)))) for _ in range(300)]
    pop += pop[:50]
    seq = Objective(toy, y, Schedule(FULL, 1, len(y)))
    with ThreadPoolExecutor(4) as ex:
        par = Objective(toy, y, Schedule(FULL, 1, len(y)), executor=ex)
        assert par.evaluate_many(pop, 1) == seq.evaluate_many(pop, 1)
    assert par.budget.objective_calls == seq.budget.objective_calls == 300


def test_budget_limits():
    ticks = itertools.count()
    b = Budget(max_calls=10, clock=lambda: float(next(ticks)))
    assert not b.exhausted()
    b.add(10)
    assert b.exhausted()
    assert Budget(max_iterations=3).exhausted(3)
    assert not Budget(max_iterations=3).exhausted(2)
    clock = iter([0.0, 5.0, 11.0])
    d = Budget(deadline=10.0, clock=lambda: next(clock))
    assert not d.exhausted()
    assert d.exhausted()


def test_schedule_must_match_target(toy):
    with pytest.raises(ContractViolation):
        Objective(toy, [1, 2, 3], Schedule(FULL, 5, 4))
