import math

import numpy as np
import pytest

from inversor.errors import CapabilityError, ContractViolation
from inversor.model import (NEG_INF, LanguageModelBackend, ObjectiveReport, Sampling,
                            Vocabulary, generate, sample_next, sequence_log_likelihood)
from inversor.ngram import train_from_corpus


def ids(model, text):
    return model.vocab.encode(text)


class TestVocabulary:
    def test_size_must_be_at_least_two(self):
        with pytest.raises(ContractViolation):
            Vocabulary(size=1)

    def test_check_rejects_out_of_range(self):
        v = Vocabulary(size=4)
        with pytest.raises(ContractViolation):
            v.check([0, 4])
        with pytest.raises(ContractViolation):
            v.check([])
        v.check([], allow_empty=True)

    def test_encode_decode_roundtrip(self, abc_model):
        v = abc_model.vocab
        assert v.tokens == ("</s>", "a", "b", "c")
        assert v.decode(v.encode("a c b")) == "a c b"
        with pytest.raises(ContractViolation):
            v.encode("a z")
        assert v.encode("a z", skip_unknown=True) == [1]

    def test_regular_ids_skip_special(self, abc_model):
        assert abc_model.vocab.regular_ids.tolist() == [1, 2, 3]

    def test_dict_roundtrip(self, toy):
        v = toy.vocab
        assert Vocabulary.from_dict(v.to_dict()) == v


class TestSequenceLogLikelihood:
    def test_hand_computed_bigram(self, abc_model):
        # P(b|a) = 3/7, P(</s>|b) = (2+1)/(2+4)
        rep = sequence_log_likelihood(abc_model, ids(abc_model, "a"), ids(abc_model, "b </s>"))
        assert rep.log_likelihood == pytest.approx(math.log(3 / 7) + math.log(1 / 2), abs=1e-12)
        assert rep.tokens_scored == 2 and rep.model_calls == 2

    def test_hand_computed_unseen_pairs(self, abc_model):
        # P(a|b) = 1/6, P(c|a) = 2/7
        rep = sequence_log_likelihood(abc_model, ids(abc_model, "a b"), ids(abc_model, "a c"))
        assert rep.log_likelihood == pytest.approx(math.log(1 / 21), abs=1e-12)

    def test_chain_rule_matches_stepwise_queries(self, toy):
        rng = np.random.default_rng(1)
        regular = toy.vocab.regular_ids
        for _ in range(50):
            x = rng.choice(regular, int(rng.integers(1, 10))).tolist()
            y = rng.choice(regular, int(rng.integers(1, 10))).tolist()
            total = 0.0
            for k in range(len(y)):
                total += float(toy.next_token_logprobs(x + y[:k])[y[k]])
            assert sequence_log_likelihood(toy, x, y).log_likelihood == pytest.approx(total, abs=1e-12)

    def test_early_stop_reports_failing_position(self):
        m = train_from_corpus(["a b", "a b", "a c"], hard_zero_tokens=["c"])
        y = m.vocab.encode("b a c b b")
        rep = sequence_log_likelihood(m, m.vocab.encode("a"), y)
        assert rep.log_likelihood == NEG_INF
        assert rep.tokens_scored == 3 and rep.model_calls == 3
        assert rep.stopped_early

    def test_additivity(self, toy):
        rng = np.random.default_rng(2)
        regular = toy.vocab.regular_ids
        for _ in range(30):
            x = rng.choice(regular, 5).tolist()
            y = rng.choice(regular, 8).tolist()
            k = int(rng.integers(1, 8))
            head = sequence_log_likelihood(toy, x, y[:k]).log_likelihood
            tail = toy.score(x + y[:k], y[k:]).log_likelihood
            assert sequence_log_likelihood(toy, x, y).log_likelihood == pytest.approx(head + tail,
                                                                                    abs=1e-10)

    def test_appending_never_increases(self, toy):
        rng = np.random.default_rng(3)
        regular = toy.vocab.regular_ids
        x = rng.choice(regular, 4).tolist()
        y = rng.choice(regular, 20).tolist()
        scores = [sequence_log_likelihood(toy, x, y[:k]).log_likelihood for k in range(1, 21)]
        assert all(b <= a for a, b in zip(scores, scores[1:]))
        assert all(s <= 0 for s in scores)

    def test_preconditions(self, toy):
        with pytest.raises(ContractViolation):
            sequence_log_likelihood(toy, [], [1])
        with pytest.raises(ContractViolation):
            sequence_log_likelihood(toy, [1], [])
        with pytest.raises(ContractViolation):
            sequence_log_likelihood(toy, [1], [toy.vocab.size])


class TestGenerate:
    def test_greedy_follows_argmax(self, abc_model):
        # after "a" the argmax is "b", after "b" it is </s>
        out = generate(abc_model, ids(abc_model, "a"), 5, Sampling(temperature=0.0))
        assert out == ids(abc_model, "b")

    def test_greedy_repeats_unique_successor(self):
        m = train_from_corpus(["a a a a b"], alpha=0.5)
        out = generate(m, m.vocab.encode("a"), 6, Sampling(temperature=0.0))
        assert out == m.vocab.encode("a a a a a a")

    def test_seeded_sampling_is_deterministic(self, toy):
        prompt = toy.vocab.encode("the fox")
        s = Sampling(temperature=1.0, seed=7)
        assert generate(toy, prompt, 20, s) == generate(toy, prompt, 20, s)
        assert len(generate(toy, prompt, 20, s)) <= 20

    def test_top_k_one_equals_greedy(self, toy):
        rng = np.random.default_rng(4)
        regular = toy.vocab.regular_ids
        for n in range(100):
            prompt = rng.choice(regular, int(rng.integers(1, 6))).tolist()
            greedy = generate(toy, prompt, 8, Sampling(temperature=0.0))
            assert generate(toy, prompt, 8, Sampling(temperature=1.3, top_k=1, seed=n)) == greedy

    def test_max_new_precondition(self, toy):
        with pytest.raises(ContractViolation):
            generate(toy, [1], 0)

    def test_backend_without_distributions(self):
        class Scorer(LanguageModelBackend):
            model_id = "scorer"
            vocab = Vocabulary(size=3)

        with pytest.raises(CapabilityError):
            generate(Scorer(), [1], 3)


class TestSampleNext:
    def test_top_p_keeps_smallest_nucleus(self):
        lp = np.log(np.array([0.5, 0.3, 0.15, 0.05]))
        rng = np.random.default_rng(0)
        draws = {sample_next(lp, Sampling(top_p=0.7, seed=0), rng) for _ in range(500)}
        assert draws == {0, 1}

    def test_zero_probability_never_drawn(self):
        lp = np.array([NEG_INF, 0.0, NEG_INF])
        rng = np.random.default_rng(0)
        assert {sample_next(lp, Sampling(), rng) for _ in range(50)} == {1}

    def test_no_support(self):
        with pytest.raises(ContractViolation):
            sample_next(np.full(3, NEG_INF), Sampling(), np.random.default_rng(0))


def test_report_flags():
    assert not ObjectiveReport(-1.0, 2, 2).stopped_early
    assert ObjectiveReport(NEG_INF, 1, 1).stopped_early
