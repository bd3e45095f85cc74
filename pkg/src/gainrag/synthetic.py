"""A small self-consistent world for smoke runs and demos.

Each question asks about an invented entity. The corpus holds, per question,
one short *helpful* passage that states the answer and one long *distractor*
that does not. Helpful passages paraphrase the question and share only the
entity name with it. For a chosen fraction of questions the distractor repeats
the entity and a relation keyword so that lexical retrieval ranks it first
("misleading" questions). The mock generator answers correctly exactly when the answer word
is in its prompt, assigns high probability to the answer when the answer word
is in its context, and "knows" background for some questions, which makes
pseudo-passages useful for those.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from . import _jsonl
from .lm_backend import MockBackend, MockLMSpec
from .retrieval import Passage, build_index
from .synthesis import QASample

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_FILLER = ("market travel weather music stone harbor winter summer garden bridge road school "
           "story people evening morning festival bread cloth tower lantern field forest valley "
           "merchant song dance colour light shadow window letter journey").split()
# (question, helpful passage, relation keyword)
_RELATIONS = (
    ("Who founded the city of {e}?", "{e} was established by {a} long ago.", "founded"),
    ("Which river runs through {e}?", "Waters of {a} flow past {e} all year.", "river"),
    ("Who painted the great mural of {e}?", "A wall artwork in {e} was made by {a}.", "mural"),
    ("What is the national dish of {e}?", "People in {e} love to cook {a}.", "dish"),
)
UNKNOWN = "unknown"


def _words(rng: random.Random, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(3)) + rng.choice(_CONSONANTS)
        if w in taken or any(w in t or t in w for t in taken):
            continue
        taken.add(w)
        out.append(w)
    return out


@dataclass
class ToyWorld:
    corpus: list[Passage]
    train: list[QASample]
    eval: list[QASample]
    mock_spec: MockLMSpec
    misleading: set[str]
    known: set[str]

    def backend(self) -> MockBackend:
        return MockBackend(self.mock_spec)

    def index(self):
        return build_index(self.corpus)

    def write(self, directory) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"corpus": d / "corpus.jsonl", "train": d / "train.jsonl",
                 "eval": d / "eval.jsonl", "mock_spec": d / "mock_lm.json"}
        _jsonl.write_jsonl(paths["corpus"], ({"id": p.id, "text": p.text} for p in self.corpus))
        for name, samples in (("train", self.train), ("eval", self.eval)):
            _jsonl.write_jsonl(paths[name], ({"id": s.id, "question": s.question, "answers": list(s.gold_answers)}
                                             for s in samples))
        self.mock_spec.save(paths["mock_spec"])
        return paths


def build_toy_world(n_train: int = 20, n_eval: int = 30, misleading_fraction: float = 0.4,
                    known_fraction: float = 0.25, p_answer: float = 0.6, seed: int = 0) -> ToyWorld:
    """Two passages per question, so the corpus has ``2 * (n_train + n_eval)`` passages."""
    rng = random.Random(seed)
    n = n_train + n_eval
    taken = set(_FILLER) | {UNKNOWN}
    entities, answers = _words(rng, n, taken), _words(rng, n, taken)
    order = list(range(n))
    rng.shuffle(order)
    misleading_idx = set(order[: round(misleading_fraction * n)])
    rng.shuffle(order)
    known_idx = set(order[: round(known_fraction * n)])

    samples, corpus, completions = [], [], []
    for i, (e, a) in enumerate(zip(entities, answers)):
        qform, hform, kw = _RELATIONS[i % len(_RELATIONS)]
        question = qform.format(e=e)
        sid = f"q{i:03d}"
        samples.append(QASample(sid, question, (a,)))
        corpus.append(Passage(f"h{i:03d}", hform.format(e=e, a=a)))
        filler = " ".join(rng.choice(_FILLER) for _ in range(30))
        if i in misleading_idx:
            text = f"{e} {kw} {e} {kw} {e} {kw} {e} {e} {e} {e} {e}. Notes on {e}: {filler}."
        else:
            text = f"Travel notes from {e}: {filler}."
        corpus.append(Passage(f"d{i:03d}", text))
        if i in known_idx:
            completions.append((f"Question: {question}", f"Background on {e}: old records mention {a}."))

    completions.append(("Please provide background", "N/A"))
    completions.extend((a, a) for a in answers)
    completions.append(("### Instruction", UNKNOWN))

    vocab = answers + [UNKNOWN]
    rest = (1.0 - p_answer) / (len(vocab) - 1)
    rules = [(a, {t: (p_answer if t == a else rest) for t in vocab}) for a in answers]
    spec = MockLMSpec.uniform(vocab, rules=rules, completions=completions)

    ids = [s.id for s in samples]
    return ToyWorld(corpus=corpus, train=samples[:n_train], eval=samples[n_train:], mock_spec=spec,
                    misleading={ids[i] for i in misleading_idx}, known={ids[i] for i in known_idx})
