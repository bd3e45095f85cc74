"""Gain-labelled training data: synthesis, grouping and correctness filtering."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import _jsonl
from .evaluation import em_nonstrict
from .gain import GainConfig, gain_signals
from .prompts import GENERATION_TEMPLATE, PSEUDO_PASSAGE_TEMPLATE, generation_prompt
from .pseudo_passage import DEFAULT_MAX_TOKENS, generate_pseudo, with_pseudo
from .retrieval import Passage

logger = logging.getLogger(__name__)

DEFAULT_SYNTHESIS_K = 20
DEFAULT_GROUP_SIZE = 16


@dataclass(frozen=True)
class QASample:
    id: str
    question: str
    gold_answers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if not self.gold_answers:
            raise ValueError(f"sample {self.id!r} has no gold answers")
        if not self.question:
            raise ValueError(f"sample {self.id!r} has an empty question")


def load_qa(path) -> list[QASample]:
    """Read ``{"id", "question", "answers"}`` JSON Lines; ids must be unique."""
    samples, seen = [], set()
    for lineno, obj in _jsonl.iter_jsonl(path):
        try:
            s = QASample(str(obj["id"]), obj["question"], [str(a) for a in obj["answers"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed sample ({exc})") from None
        if s.id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate sample id {s.id!r}")
        seen.add(s.id)
        samples.append(s)
    return samples


def transform_label(gain: float) -> float:
    """Map a raw gain (a perplexity, lower is better) to ``-log(gain + 1)``."""
    return -math.log1p(gain)


@dataclass(frozen=True)
class GainRecord:
    query_id: str
    passage_id: str
    origin: str
    gain: float
    label: float
    retrieval_score: float = 0.0
    mode: str = "exact"

    @classmethod
    def make(cls, query_id: str, passage: Passage, gain: float, retrieval_score: float = 0.0,
             mode: str = "exact") -> "GainRecord":
        return cls(query_id, passage.id, passage.origin, gain, transform_label(gain),
                   0.0 if passage.is_pseudo else retrieval_score, mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "GainRecord":
        return cls(str(d["query_id"]), str(d["passage_id"]), d["origin"], float(d["gain"]), float(d["label"]),
                   float(d.get("retrieval_score", 0.0)), d.get("mode", "exact"))


def read_records(path) -> list[GainRecord]:
    return [GainRecord.from_dict(d) for d in _jsonl.read_jsonl(path)]


def write_records(path, records: Sequence[GainRecord]) -> int:
    return _jsonl.write_jsonl(path, (r.to_dict() for r in records))


@dataclass
class SynthesisResult:
    records: list[GainRecord]
    pseudo_passages: dict[str, Passage | None]
    failures: list[dict] = field(default_factory=list)

    def passage_lookup(self, index) -> Callable[[str], Passage]:
        pseudo = {p.id: p for p in self.pseudo_passages.values() if p is not None}

        def lookup(pid: str) -> Passage:
            return pseudo[pid] if pid in pseudo else index.passage(pid)
        return lookup


def _pseudo_row(qid: str, p: Passage | None) -> dict:
    return {"query_id": qid, "id": p.id if p else None, "text": p.text if p else None}


def read_pseudo(path) -> dict[str, Passage | None]:
    out: dict[str, Passage | None] = {}
    for row in _jsonl.read_jsonl(path):
        out[row["query_id"]] = Passage(row["id"], row["text"], origin="pseudo") if row["id"] else None
    return out


def synthesize(dataset: Sequence[QASample], index, backend, k: int = DEFAULT_SYNTHESIS_K,
               config: GainConfig = GainConfig(), *, use_pseudo: bool = True,
               pseudo_template: str = PSEUDO_PASSAGE_TEMPLATE, pseudo_max_tokens: int = DEFAULT_MAX_TOKENS,
               drop_unavailable: bool = True, retriever: Callable | None = None,
               records_path=None, pseudo_path=None, failures_path=None) -> SynthesisResult:
    """Gain records for every (sample, candidate) pair.

    Candidates are the pseudo-passage (index 0, when the generator offers one)
    followed by the top-``k`` retrieved passages. Gains use the first gold
    answer. With ``records_path``/``pseudo_path`` the run is resumable: pairs
    already on disk are not recomputed, progress is appended per sample, and
    the record file is finally rewritten in canonical (dataset, candidate)
    order. A failing sample is skipped and logged, not fatal.

    ``retriever(query_id, query, k)`` may replace index retrieval; it must
    return a :class:`~gainrag.retrieval.RetrievalResult`.
    """
    if not dataset:
        raise ValueError("empty dataset")
    done: dict[tuple[str, str], GainRecord] = {}
    pseudo_cache: dict[str, Passage | None] = {}
    if records_path is not None and Path(records_path).exists():
        done = {(r.query_id, r.passage_id): r for r in read_records(records_path)}
    if pseudo_path is not None and Path(pseudo_path).exists():
        pseudo_cache = read_pseudo(pseudo_path)

    ordered: list[GainRecord] = []
    pseudos: dict[str, Passage | None] = {}
    failures: list[dict] = []
    for sample in dataset:
        q, qid = sample.question, sample.id
        try:
            if not use_pseudo:
                pseudo = None
            elif qid in pseudo_cache:
                pseudo = pseudo_cache[qid]
            else:
                pseudo = generate_pseudo(backend, q, pseudo_max_tokens, pseudo_template, drop_unavailable)
                if pseudo_path is not None:
                    _jsonl.append_jsonl(pseudo_path, _pseudo_row(qid, pseudo))
            pseudos[qid] = pseudo
            result = retriever(qid, q, k) if retriever else index.retrieve(q, k)
            retrieved = [(index.passage(pid), s) for pid, s in result.entries]
            candidates = with_pseudo((pseudo, 0.0) if pseudo else None, retrieved, lambda c: c[0].is_pseudo)
            todo = [(p, s) for p, s in candidates if (qid, p.id) not in done]
            gains = gain_signals(backend, q, [p for p, _ in todo], sample.gold_answers[0], config) if todo else []
        except Exception as exc:  # noqa: BLE001 - one bad sample must not abort the run
            logger.warning("synthesis failed for sample %s: %s", qid, exc)
            failures.append({"id": qid, "error": f"{type(exc).__name__}: {exc}"})
            continue
        fresh = {p.id: GainRecord.make(qid, p, g, s, config.mode) for (p, s), g in zip(todo, gains)}
        if records_path is not None:
            for r in fresh.values():
                _jsonl.append_jsonl(records_path, r.to_dict())
        done.update({(qid, pid): r for pid, r in fresh.items()})
        ordered.extend(done[(qid, p.id)] for p, _ in candidates)

    if config.mode != "exact":
        logger.warning("gains computed in %s mode (no full-vocabulary renormalization)", config.mode)
    if records_path is not None:
        write_records(records_path, ordered)
    if pseudo_path is not None:
        _jsonl.write_jsonl(pseudo_path, (_pseudo_row(s.id, pseudos[s.id]) for s in dataset if s.id in pseudos))
    if failures_path is not None:
        _jsonl.write_jsonl(failures_path, failures)
    return SynthesisResult(ordered, pseudos, failures)


@dataclass(frozen=True)
class GroupMember:
    record: GainRecord
    passage: Passage


@dataclass(frozen=True)
class TrainingGroup:
    query_id: str
    question: str
    members: tuple[GroupMember, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def labels(self) -> list[float]:
        return [m.record.label for m in self.members]


def assemble_groups(records: Sequence[GainRecord], questions: Mapping[str, str],
                    passages: Callable[[str], Passage] | Mapping[str, Passage],
                    group_size: int = DEFAULT_GROUP_SIZE, seed: int = 0) -> list[TrainingGroup]:
    """One training group per query, in first-appearance order.

    Queries with more than ``group_size`` candidates keep a random subset
    (seeded per query, so groups do not depend on query order). The pseudo
    member, when present, is always kept and placed first.
    """
    if group_size < 1:
        raise ValueError("group_size must be positive")
    lookup = passages.__getitem__ if isinstance(passages, Mapping) else passages
    by_query: dict[str, list[GainRecord]] = {}
    for r in records:
        by_query.setdefault(r.query_id, []).append(r)
    groups = []
    for qid, recs in by_query.items():
        if len({r.passage_id for r in recs}) != len(recs):
            raise ValueError(f"duplicate passage ids in records for query {qid!r}")
        pseudo = [r for r in recs if r.origin == "pseudo"]
        if len(pseudo) > 1:
            raise ValueError(f"query {qid!r} has more than one pseudo record")
        rest = [r for r in recs if r.origin != "pseudo"]
        room = group_size - len(pseudo)
        if len(rest) > room:
            rng = random.Random(f"{seed}:{qid}")
            picked = sorted(rng.sample(range(len(rest)), room))
            rest = [rest[i] for i in picked]
        chosen = pseudo + rest
        members = tuple(GroupMember(r, lookup(r.passage_id)) for r in chosen)
        groups.append(TrainingGroup(qid, questions[qid], members))
    return groups


def filter_groups(groups: Sequence[TrainingGroup], backend, golds: Mapping[str, Sequence[str]],
                  template: str = GENERATION_TEMPLATE, max_tokens: int = 32) -> tuple[list[TrainingGroup], dict]:
    """Keep groups whose highest-label passage leads the generator to a correct answer.

    Correctness is non-strict EM against all gold answers. Returns the kept
    groups and a report ``{"kept", "dropped", "reasons"}``.
    """
    kept, reasons = [], {}
    for g in groups:
        best = max(range(g.size), key=lambda i: (g.members[i].record.label, -i))
        top = g.members[best].passage
        try:
            pred = backend.complete(generation_prompt(g.question, top.content(), template), max_tokens=max_tokens)
        except Exception as exc:  # noqa: BLE001
            logger.warning("filter: generation failed for %s: %s", g.query_id, exc)
            reasons[g.query_id] = f"backend error: {exc}"
            continue
        if em_nonstrict(pred, golds[g.query_id]):
            kept.append(g)
        else:
            reasons[g.query_id] = "top-gain passage did not yield a correct answer"
    return kept, {"kept": len(kept), "dropped": len(groups) - len(kept), "reasons": reasons}
