"""Pseudo-passages: background text the generator writes from its own knowledge."""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

from .prompts import PSEUDO_PASSAGE_TEMPLATE, pseudo_passage_prompt
from .retrieval import Passage

DEFAULT_MAX_TOKENS = 160
NOT_AVAILABLE = "n/a"

T = TypeVar("T")


def pseudo_id(query: str) -> str:
    return "pseudo:" + hashlib.sha256(query.encode("utf-8")).hexdigest()[:16]


def is_unavailable(response: str) -> bool:
    text = response.strip().lower()
    return not text or text == NOT_AVAILABLE


def generate_pseudo(backend, q: str, max_tokens: int = DEFAULT_MAX_TOKENS,
                    template: str = PSEUDO_PASSAGE_TEMPLATE, drop_unavailable: bool = True) -> Passage | None:
    """Prompt for background on ``q``; ``None`` when the model answers "N/A" or nothing.

    With ``drop_unavailable=False`` an "N/A" reply is kept as a passage
    (an empty reply is still dropped).
    """
    if not q:
        raise ValueError("question must be nonempty")
    response = backend.complete(pseudo_passage_prompt(q, template), max_tokens=max_tokens)
    if not response.strip() or (drop_unavailable and is_unavailable(response)):
        return None
    return Passage(id=pseudo_id(q), text=response.strip(), origin="pseudo")


def with_pseudo(pseudo: T | None, others: Sequence[T], is_pseudo=lambda x: x.is_pseudo) -> list[T]:
    """Candidate list with ``pseudo`` (if any) at index 0 and no other pseudo entries."""
    rest = [x for x in others if not is_pseudo(x)]
    return ([pseudo] if pseudo is not None else []) + rest
