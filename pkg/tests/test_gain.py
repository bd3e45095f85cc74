import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gainrag.gain import (APPROXIMATE, EXACT, GainConfig, contrastive_score_seq, gain_signal, gain_signals,
                          log_perplexity, perplexity)
from gainrag.lm_backend import (CapabilityError, MockBackend, MockLMSpec, TokenizationMismatchError,
                                TokenScoreSeq)
from gainrag.prompts import generation_prompt
from gainrag.retrieval import Passage
from oracles import gain_oracle, plain_ppl_oracle

LN = math.log


@pytest.mark.parametrize("logprobs, expected", [
    ([LN(0.25)], 4.0),
    ([0.0, 0.0, 0.0], 1.0),
    ([LN(0.5), LN(0.125)], 4.0),
])
def test_perplexity_examples(logprobs, expected):
    assert perplexity(TokenScoreSeq(["t"] * len(logprobs), logprobs)) == pytest.approx(expected, rel=1e-12)


def test_perplexity_long_sequence_stays_in_log_space():
    seq = TokenScoreSeq(["t"] * 500, [-20.0] * 500)
    assert log_perplexity(seq) == pytest.approx(20.0)
    assert perplexity(seq) == pytest.approx(math.exp(20.0))
    assert perplexity([-800.0]) == math.inf


def test_perplexity_empty():
    with pytest.raises(ValueError):
        perplexity([])


def _pair(p_with, p_without, token="paris"):
    vocab = ["paris", "london", "rome", "berlin"]
    dw = {t: LN(p) for t, p in zip(vocab, p_with)}
    dwo = {t: LN(p) for t, p in zip(vocab, p_without)}
    return (TokenScoreSeq([token], [dw[token]], [dw]), TokenScoreSeq([token], [dwo[token]], [dwo]))


def test_exact_mode_hand_value():
    w, wo = _pair((0.5, 1 / 6, 1 / 6, 1 / 6), (0.25,) * 4)
    out = contrastive_score_seq(w, wo, 0.5, EXACT)
    assert out.logprobs[0] == pytest.approx(-0.456, abs=5e-4)
    assert math.exp(out.logprobs[0]) == pytest.approx(0.634, abs=5e-4)
    assert math.fsum(math.exp(v) for v in out.full_distributions[0].values()) == pytest.approx(1.0, abs=1e-12)


def test_approximate_mode_hand_value():
    w, wo = _pair((0.5, 1 / 6, 1 / 6, 1 / 6), (0.25,) * 4)
    out = contrastive_score_seq(w, wo, 0.5, APPROXIMATE)
    assert out.logprobs[0] == pytest.approx(1.5 * LN(0.5) - 0.5 * LN(0.25), abs=1e-12)
    assert out.logprobs[0] == pytest.approx(-0.3466, abs=1e-4)
    assert not out.normalized


def test_alpha_zero_is_identity():
    w, wo = _pair((0.4, 0.3, 0.2, 0.1), (0.1, 0.2, 0.3, 0.4))
    assert contrastive_score_seq(w, wo, 0.0, EXACT).logprobs == w.logprobs


def test_mismatched_tokens_error():
    w, _ = _pair((0.25,) * 4, (0.25,) * 4, "paris")
    _, wo = _pair((0.25,) * 4, (0.25,) * 4, "rome")
    with pytest.raises(TokenizationMismatchError):
        contrastive_score_seq(w, wo, 0.5)


def test_exact_mode_needs_distributions():
    with pytest.raises(CapabilityError):
        contrastive_score_seq(TokenScoreSeq(["a"], [-1.0]), TokenScoreSeq(["a"], [-1.0]), 0.5, EXACT)


def test_gain_signal_hand_values(paris_backend, paris_doc):
    g = gain_signal(paris_backend, "Which city?", paris_doc, "paris", GainConfig(alpha=0.5))
    assert g == pytest.approx(1.577, abs=1e-3)
    assert gain_signal(paris_backend, "Which city?", paris_doc, "paris", GainConfig(alpha=0.0)) == pytest.approx(2.0)


def test_gain_signal_ignored_passage_equals_plain_ppl(paris_backend):
    c = Passage("x", "unrelated text")
    plain = perplexity(paris_backend.score_continuation(generation_prompt("q", ""), "rome london"))
    for alpha in (0.0, 0.5, 2.0):
        for mode in (EXACT, APPROXIMATE):
            assert gain_signal(paris_backend, "q", c, "rome london", GainConfig(alpha, mode)) == pytest.approx(plain)


def test_helpful_passage_has_lower_gain(paris_backend, paris_doc):
    other = Passage("p2", "nothing useful")
    gains = gain_signals(paris_backend, "Which city?", [paris_doc, other], "paris")
    assert gains[0] < gains[1]


def test_gain_signals_matches_single_calls(paris_spec, paris_doc):
    backend = MockBackend(paris_spec, parallelism=4)
    passages = [paris_doc, Passage("p2", "x"), Passage("p3", "paris-doc again")] * 3
    cfg = GainConfig(alpha=1.0)
    assert gain_signals(backend, "q", passages, "paris rome", cfg) == \
        [gain_signal(backend, "q", p, "paris rome", cfg) for p in passages]


def test_exact_mode_requires_backend_capability(paris_doc):
    class NoFull:
        supports_full_distributions = False

    with pytest.raises(CapabilityError):
        gain_signal(NoFull(), "q", paris_doc, "paris", GainConfig(mode=EXACT))


def test_config_validation():
    with pytest.raises(ValueError):
        GainConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        GainConfig(mode="fast")


def _random_spec(rng: random.Random, n_vocab: int, n_rules: int) -> MockLMSpec:
    vocab = [f"t{i}" for i in range(n_vocab)]

    def dist():
        w = [rng.uniform(0.05, 1.0) for _ in vocab]
        z = math.fsum(w)
        return {t: x / z for t, x in zip(vocab, w)}

    markers = [f"mk{i}" for i in range(n_rules)] + vocab[: max(1, n_vocab // 2)]
    rng.shuffle(markers)
    return MockLMSpec(vocab, dist(), rules=[(m, dist()) for m in markers])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 4),
       st.floats(0.0, 3.0, allow_nan=False))
def test_exact_gain_matches_oracle(seed, n_vocab, n_tokens, alpha):
    rng = random.Random(seed)
    spec = _random_spec(rng, n_vocab, 3)
    answer = " ".join(rng.choice(spec.vocabulary) for _ in range(n_tokens))
    text = " ".join(rng.sample([f"mk{i}" for i in range(3)] + ["plain"], 2))
    got = gain_signal(MockBackend(spec), "q?", Passage("c", text), answer, GainConfig(alpha, EXACT))
    # gains can reach ~1e6 for peaked random tables, so allow float rounding relative to the magnitude
    assert got == pytest.approx(gain_oracle(spec, "q?", text, answer, alpha), abs=1e-9, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alpha_zero_reduces_to_plain_perplexity(seed):
    rng = random.Random(seed)
    spec = _random_spec(rng, rng.randint(2, 8), 3)
    answer = " ".join(rng.choice(spec.vocabulary) for _ in range(rng.randint(1, 4)))
    text = f"mk{rng.randint(0, 2)}"
    for mode in (EXACT, APPROXIMATE):
        got = gain_signal(MockBackend(spec), "q", Passage("c", text), answer, GainConfig(0.0, mode))
        ctx = generation_prompt("q", text)
        assert abs(got - plain_ppl_oracle(spec, ctx, answer)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
def test_exact_distributions_are_normalized(seed, alpha):
    rng = random.Random(seed)
    spec = _random_spec(rng, 6, 2)
    b = MockBackend(spec)
    a = " ".join(rng.choice(spec.vocabulary) for _ in range(3))
    w = b.score_continuation("mk0", a, True)
    wo = b.score_continuation("none", a, True)
    out = contrastive_score_seq(w, wo, alpha, EXACT)
    for d in out.full_distributions:
        assert abs(math.fsum(math.exp(v) for v in d.values()) - 1.0) <= 1e-6
    assert all(lp <= 0 for lp in out.logprobs)
