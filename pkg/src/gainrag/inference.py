"""Answering questions: pseudo-passage, retrieval, selection, generation."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from . import _jsonl
from .prompts import GENERATION_TEMPLATE, PSEUDO_PASSAGE_TEMPLATE, generation_prompt
from .pseudo_passage import DEFAULT_MAX_TOKENS, generate_pseudo, with_pseudo
from .retrieval import DEFAULT_K, Passage
from .selector import argmax_first, score_candidates

GAINRAG = "gainrag"
STANDARD_RAG = "standard-rag"
PSEUDO_ONLY = "pseudo-only"
NO_RETRIEVAL = "no-retrieval"
MODES = (GAINRAG, STANDARD_RAG, PSEUDO_ONLY, NO_RETRIEVAL)


class DegenerateCandidatesError(RuntimeError):
    def __init__(self, query: str):
        super().__init__(f"degenerate: no candidates for query {query!r}")


@dataclass
class InferenceTrace:
    """Record of one answered question.

    ``selector_scores`` holds whatever score drove the choice: the learned
    selector's in ``gainrag`` mode, retrieval scores in ``standard-rag``,
    and a single 0.0 for the pseudo passage in ``pseudo-only``. The chosen
    candidate is always the first maximum of these scores.
    """

    query_id: str
    query: str
    mode: str
    pseudo: dict | None
    candidates: list[dict]
    selector_scores: list[float]
    chosen_id: str | None
    chosen_origin: str | None
    answer: str
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = False) -> dict:
        d = asdict(self)
        if not timings:
            del d["timings"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceTrace":
        return cls(**{**{"timings": {}}, **d})


def _candidate_row(p: Passage, score: float) -> dict:
    return {"id": p.id, "origin": p.origin, "retrieval_score": score}


def answer(backend, index, model, q: str, k: int = DEFAULT_K, mode: str = GAINRAG, query_id: str = "", *,
           use_pseudo: bool = True, retriever: Callable | None = None,
           generation_template: str = GENERATION_TEMPLATE, pseudo_template: str = PSEUDO_PASSAGE_TEMPLATE,
           max_tokens: int = 32, pseudo_max_tokens: int = DEFAULT_MAX_TOKENS) -> InferenceTrace:
    """Answer ``q`` in one of :data:`MODES`.

    ``gainrag`` generates a pseudo-passage (unless ``use_pseudo`` is False),
    retrieves ``k`` passages, scores every candidate with ``model`` and
    generates with the best one. ``standard-rag`` uses the rank-1 retrieved
    passage, ``pseudo-only`` the pseudo-passage, ``no-retrieval`` nothing.
    ``retriever(query_id, q, k)`` may replace ``index.retrieve``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    timings: dict[str, float] = {}
    tick = time.perf_counter()

    def lap(stage):
        nonlocal tick
        now = time.perf_counter()
        timings[stage] = now - tick
        tick = now

    pseudo = None
    if mode == PSEUDO_ONLY or (mode == GAINRAG and use_pseudo):
        pseudo = generate_pseudo(backend, q, pseudo_max_tokens, pseudo_template)
        lap("pseudo")

    candidates: list[tuple[Passage, float]] = []
    if mode in (GAINRAG, STANDARD_RAG):
        result = retriever(query_id, q, k) if retriever else index.retrieve(q, k)
        candidates = [(index.passage(pid), s) for pid, s in result.entries]
        lap("retrieve")
    if mode == GAINRAG:
        candidates = with_pseudo((pseudo, 0.0) if pseudo else None, candidates, lambda c: c[0].is_pseudo)
        if not candidates:
            raise DegenerateCandidatesError(q)
        scores = score_candidates(model, q, candidates)
        lap("select")
    elif mode == STANDARD_RAG:
        scores = [s for _, s in candidates]
    elif mode == PSEUDO_ONLY and pseudo is not None:
        candidates, scores = [(pseudo, 0.0)], [0.0]
    else:
        scores = []

    chosen = candidates[argmax_first(scores)][0] if candidates else None
    prompt = generation_prompt(q, chosen.content() if chosen else "", generation_template)
    text = backend.complete(prompt, max_tokens=max_tokens)
    lap("generate")
    return InferenceTrace(
        query_id=query_id, query=q, mode=mode,
        pseudo={"id": pseudo.id, "text": pseudo.text} if pseudo else None,
        candidates=[_candidate_row(p, s) for p, s in candidates],
        selector_scores=[float(s) for s in scores],
        chosen_id=chosen.id if chosen else None,
        chosen_origin=chosen.origin if chosen else None,
        answer=text.strip(), timings=timings)


def answer_all(dataset: Sequence, backend, index, model, k: int = DEFAULT_K, mode: str = GAINRAG,
               **kwargs) -> list[InferenceTrace]:
    return [answer(backend, index, model, s.question, k, mode, s.id, **kwargs) for s in dataset]


def write_traces(path, traces: Sequence[InferenceTrace], timings_path=None) -> None:
    """Traces go to ``path`` without timings; timings (if wanted) go to ``timings_path``."""
    _jsonl.write_jsonl(path, (t.to_dict() for t in traces))
    if timings_path is not None:
        _jsonl.write_jsonl(timings_path, ({"query_id": t.query_id, **t.timings} for t in traces))


def read_traces(path) -> list[InferenceTrace]:
    return [InferenceTrace.from_dict(d) for d in _jsonl.read_jsonl(path)]
