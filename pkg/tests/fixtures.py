"""Synthetic training groups for selector tests."""

from __future__ import annotations

import numpy as np

from gainrag.retrieval import Passage
from gainrag.synthesis import GainRecord, GroupMember, TrainingGroup

WORDS = [f"w{i}" for i in range(40)]


def _text(rng: np.random.Generator) -> str:
    return " ".join(rng.choice(WORDS, size=int(rng.integers(3, 15))))


def synthetic_groups(n: int, size: int = 16, seed: int = 0, gain_of=None, pseudo_best: bool = False,
                     prefix: str = "g") -> list[TrainingGroup]:
    """Groups whose raw gains are ``gain_of(retrieval_score)``; texts are random noise.

    With ``pseudo_best`` the first member is a pseudo passage whose gain is drawn
    independently of the rest of the group, capped strictly below every other
    member's gain. A pointwise scorer can learn this; a gain defined relative to
    the group's best member would not be visible from the pseudo's own features.
    """
    rng = np.random.default_rng(seed)
    gain_of = gain_of or (lambda rs: float(np.exp(7.0 * (1.0 - rs / 20.0))))
    groups = []
    for gi in range(n):
        qid = f"{prefix}{gi:05d}"
        q = _text(rng)
        members = []
        scores = rng.uniform(0.0, 20.0, size=size)
        gains = [gain_of(s) for s in scores]
        if pseudo_best:
            gains[0] = min(float(rng.uniform(0.1, 0.9)), 0.9 * min(gains[1:]))
        for j in range(size):
            pseudo = pseudo_best and j == 0
            p = Passage(f"pseudo:{qid}" if pseudo else f"{qid}-{j:02d}", _text(rng),
                        origin="pseudo" if pseudo else "retrieved")
            members.append(GroupMember(GainRecord.make(qid, p, gains[j], float(scores[j])), p))
        groups.append(TrainingGroup(qid, q, tuple(members)))
    return groups
