"""Perplexity and contrastive perplexity of a gold answer given a passage.

The gain of passage ``c`` for answer ``a`` to question ``q`` is the perplexity
of ``a`` under the contrastively adjusted next-token distribution

    softmax((1 + alpha) * logit(. | c, q, a_<t) - alpha * logit(. | q, a_<t))

Lower values mean the passage helps more. Log-probabilities stand in for
logits throughout; the per-step softmax makes the two interchangeable.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lm_backend import CapabilityError, TokenizationMismatchError, TokenScoreSeq
from .prompts import GENERATION_TEMPLATE, generation_prompt
from .retrieval import Passage

logger = logging.getLogger(__name__)

EXACT = "exact"
APPROXIMATE = "approximate"


@dataclass(frozen=True)
class GainConfig:
    alpha: float = 0.5
    mode: str = EXACT
    template: str = GENERATION_TEMPLATE

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.mode not in (EXACT, APPROXIMATE):
            raise ValueError(f"unknown gain mode {self.mode!r}")


def log_perplexity(scores: TokenScoreSeq | Sequence[float]) -> float:
    logprobs = scores.logprobs if isinstance(scores, TokenScoreSeq) else scores
    if len(logprobs) == 0:
        raise ValueError("perplexity of an empty sequence is undefined")
    return -math.fsum(logprobs) / len(logprobs)


def perplexity(scores: TokenScoreSeq | Sequence[float]) -> float:
    """``exp(-mean(logprobs))``; overflows to ``inf`` rather than raising."""
    lp = log_perplexity(scores)
    try:
        return math.exp(lp)
    except OverflowError:
        return math.inf


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(x - m))))


def contrastive_score_seq(with_ctx: TokenScoreSeq, without_ctx: TokenScoreSeq,
                          alpha: float, mode: str = EXACT) -> TokenScoreSeq:
    """Apply the contrastive adjustment to an aligned pair of scorings.

    ``exact`` renormalizes the adjusted logits over the full vocabulary at each
    step and records the realized token's log-probability. ``approximate``
    only sees the realized tokens and returns the unnormalized
    ``(1 + alpha) * lp_with - alpha * lp_without`` per token.
    """
    if with_ctx.tokens != without_ctx.tokens:
        raise TokenizationMismatchError(
            f"token lists differ: {list(with_ctx.tokens)} vs {list(without_ctx.tokens)}")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return with_ctx
    if mode == APPROXIMATE:
        adjusted = [(1.0 + alpha) * w - alpha * wo for w, wo in zip(with_ctx.logprobs, without_ctx.logprobs)]
        return TokenScoreSeq(with_ctx.tokens, adjusted, normalized=False)
    if mode != EXACT:
        raise ValueError(f"unknown gain mode {mode!r}")
    if with_ctx.full_distributions is None or without_ctx.full_distributions is None:
        raise CapabilityError("exact contrastive scoring needs full distributions on both sequences")

    logprobs, dists = [], []
    for tok, d_with, d_without in zip(with_ctx.tokens, with_ctx.full_distributions, without_ctx.full_distributions):
        if d_with.keys() != d_without.keys():
            raise TokenizationMismatchError("per-step vocabularies differ between the paired scorings")
        vocab = list(d_with)
        adj = (1.0 + alpha) * np.array([d_with[t] for t in vocab]) - alpha * np.array([d_without[t] for t in vocab])
        log_adj = adj - _logsumexp(adj)
        step = dict(zip(vocab, log_adj.tolist()))
        logprobs.append(min(step[tok], 0.0))
        dists.append(step)
    return TokenScoreSeq(with_ctx.tokens, logprobs, dists)


def _score_pair(backend, q: str, passage_text: str, answer: str, config: GainConfig,
                without: TokenScoreSeq | None = None) -> TokenScoreSeq:
    full = config.mode == EXACT and config.alpha > 0
    if full and not backend.supports_full_distributions:
        raise CapabilityError("exact gain mode needs a backend with full-distribution support")
    with_ctx = backend.score_continuation(generation_prompt(q, passage_text, config.template), answer, full)
    if config.alpha == 0:
        return with_ctx
    if without is None:
        without = backend.score_continuation(generation_prompt(q, "", config.template), answer, full)
    return contrastive_score_seq(with_ctx, without, config.alpha, config.mode)


def gain_signal(backend, q: str, c: Passage, a: str, config: GainConfig = GainConfig()) -> float:
    """Contrastive perplexity of answer ``a`` given passage ``c``; lower is better."""
    if not a:
        raise ValueError("answer must be nonempty")
    return perplexity(_score_pair(backend, q, c.content(), a, config))


def gain_signals(backend, q: str, passages: Sequence[Passage], a: str,
                 config: GainConfig = GainConfig()) -> list[float]:
    """:func:`gain_signal` for every passage, sharing the passage-free scoring.

    Passages are scored concurrently up to the backend's parallelism bound;
    results keep the input order.
    """
    if not a:
        raise ValueError("answer must be nonempty")
    without = None
    if config.alpha > 0:
        full = config.mode == EXACT
        if full and not backend.supports_full_distributions:
            raise CapabilityError("exact gain mode needs a backend with full-distribution support")
        without = backend.score_continuation(generation_prompt(q, "", config.template), a, full)

    def one(p: Passage) -> float:
        return perplexity(_score_pair(backend, q, p.content(), a, config, without))

    workers = min(backend.descriptor.parallelism, max(len(passages), 1))
    if workers <= 1:
        return [one(p) for p in passages]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, passages))
