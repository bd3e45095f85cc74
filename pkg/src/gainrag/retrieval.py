"""Passage corpus loading and Okapi BM25 retrieval.

Scores are accumulated term by term in sorted term order so that a per-passage
reference computation in the same order reproduces them bit for bit.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._jsonl import iter_jsonl

_TOKEN_RE = re.compile(r"[^\W_]+")

DEFAULT_K = 100


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    title: str | None = None
    origin: str = "retrieved"

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be nonempty")
        if not self.text or not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")
        if self.origin not in ("retrieved", "pseudo"):
            raise ValueError(f"unknown passage origin {self.origin!r}")

    @property
    def is_pseudo(self) -> bool:
        return self.origin == "pseudo"

    def content(self) -> str:
        """Text used for indexing and prompting: title line (if any) plus body."""
        return f"{self.title}\n{self.text}" if self.title else self.text


class CorpusError(ValueError):
    pass


def ingest_corpus(path) -> list[Passage]:
    """Read a JSON Lines corpus of ``{"id", "title"?, "text"}`` objects."""
    passages: list[Passage] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_checked(path):
        try:
            pid, text = obj["id"], obj["text"]
            title = obj.get("title")
            if not isinstance(pid, str) or not isinstance(text, str) or not (title is None or isinstance(title, str)):
                raise TypeError("id, text and title must be strings")
            passage = Passage(id=pid, text=text, title=title or None)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed passage ({exc})") from None
        if pid in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate passage id {pid!r} (first seen on line {seen[pid]})")
        seen[pid] = lineno
        passages.append(passage)
    return passages


def _iter_checked(path):
    try:
        yield from iter_jsonl(path)
    except ValueError as exc:
        raise CorpusError(str(exc)) from None


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self):
        return len(self.entries)


def rank(scored: Iterable[tuple[str, float]], k: int) -> tuple[tuple[str, float], ...]:
    """Sort by descending score, ties by ascending id, and keep the first ``k``."""
    return tuple(sorted(scored, key=lambda e: (-e[1], e[0]))[:k])


@dataclass(frozen=True, eq=False)
class Index:
    """Immutable inverted index over a passage corpus."""

    passages: tuple[Passage, ...]
    postings: Mapping[str, tuple[np.ndarray, np.ndarray]]
    doc_lengths: np.ndarray
    avg_length: float
    k1: float = 1.2
    b: float = 0.75
    idf: Mapping[str, float] = field(default_factory=dict)
    _by_id: Mapping[str, int] = field(default_factory=dict)

    @property
    def doc_count(self) -> int:
        return len(self.passages)

    def passage(self, pid: str) -> Passage:
        return self.passages[self._by_id[pid]]

    def __contains__(self, pid: str) -> bool:
        return pid in self._by_id

    def term_contribution(self, term: str) -> tuple[np.ndarray, np.ndarray]:
        """Passage positions containing ``term`` and the term's BM25 contribution to each."""
        docs, tf = self.postings[term]
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[docs] / self.avg_length)
        return docs, self.idf[term] * (tf * (self.k1 + 1.0)) / (tf + norm)

    def score_all(self, query: str) -> np.ndarray:
        scores = np.zeros(self.doc_count)
        for term in sorted(set(tokenize(query))):
            if term in self.postings:
                docs, contrib = self.term_contribution(term)
                scores[docs] += contrib
        return scores

    def retrieve(self, query: str, k: int = DEFAULT_K) -> RetrievalResult:
        """Top-``k`` passages with nonzero BM25 score, ties broken by ascending id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.score_all(query)
        hit = np.flatnonzero(scores > 0.0)
        scored = ((self.passages[i].id, float(scores[i])) for i in hit)
        return RetrievalResult(query, rank(scored, k))

    def stats(self) -> dict:
        return {"doc_count": self.doc_count, "avg_length": self.avg_length,
                "vocab_size": len(self.postings), "k1": self.k1, "b": self.b}


def idf_weight(doc_count: int, df: int) -> float:
    # Lucene-style smoothing keeps every idf strictly positive.
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def build_index(corpus: Sequence[Passage], k1: float = 1.2, b: float = 0.75) -> Index:
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    by_id: dict[str, int] = {}
    term_docs: dict[str, list[int]] = {}
    term_tfs: dict[str, list[int]] = {}
    lengths = np.zeros(len(corpus))
    for i, p in enumerate(corpus):
        if p.id in by_id:
            raise ValueError(f"duplicate passage id {p.id!r}")
        by_id[p.id] = i
        toks = tokenize(p.content())
        lengths[i] = len(toks)
        for term, tf in Counter(toks).items():
            term_docs.setdefault(term, []).append(i)
            term_tfs.setdefault(term, []).append(tf)
    postings = {t: (np.asarray(term_docs[t], dtype=np.int64), np.asarray(term_tfs[t], dtype=float))
                for t in term_docs}
    n = len(corpus)
    idf = {t: idf_weight(n, len(d)) for t, d in term_docs.items()}
    avg = float(lengths.sum() / n)
    return Index(tuple(corpus), postings, lengths, avg, k1, b, idf, by_id)


ExternalScores = Mapping[tuple[str, str], float]


def import_external_scores(path) -> dict[tuple[str, str], float]:
    """Read ``{"query_id", "passage_id", "score"}`` JSON Lines into a lookup table."""
    table: dict[tuple[str, str], float] = {}
    for lineno, obj in _iter_checked(path):
        try:
            key = (str(obj["query_id"]), str(obj["passage_id"]))
            score = float(obj["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed score entry ({exc})") from None
        if not math.isfinite(score):
            raise CorpusError(f"{path}:{lineno}: non-finite score")
        table[key] = score
    return table


def retrieve_external(scores: ExternalScores, query_id: str, k: int = DEFAULT_K,
                      candidates: Iterable[str] | None = None, query: str = "") -> RetrievalResult:
    """Rank by externally supplied scores.

    With ``candidates`` given, every candidate must have a score for
    ``query_id``; otherwise all passages scored for the query are ranked.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if candidates is None:
        scored = [(pid, s) for (qid, pid), s in scores.items() if qid == query_id]
    else:
        scored = []
        for pid in candidates:
            if (query_id, pid) not in scores:
                raise KeyError(f"no external score for query {query_id!r}, passage {pid!r}")
            scored.append((pid, scores[(query_id, pid)]))
    return RetrievalResult(query, rank(scored, k))
