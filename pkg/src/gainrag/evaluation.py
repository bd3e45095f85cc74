"""Answer metrics (non-strict EM, token F1), batch evaluation, coverage curves,
and win/tie/lose comparison between two runs."""

from __future__ import annotations

import csv
import logging
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .prompts import GENERATION_TEMPLATE, generation_prompt

logger = logging.getLogger(__name__)

_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, drop punctuation and the articles a/an/the, split on whitespace."""
    return [t for t in text.lower().translate(_PUNCT).split() if t not in _ARTICLES]


def contains_tokens(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    return any(list(haystack[i:i + n]) == list(needle) for i in range(len(haystack) - n + 1))


def em_nonstrict(prediction: str, golds: Sequence[str]) -> int:
    """1 if some normalized gold appears as a contiguous run in the normalized prediction."""
    if not golds:
        raise ValueError("at least one gold answer is required")
    pred = normalize(prediction)
    return int(any(contains_tokens(pred, normalize(g)) for g in golds))


def _f1_single(pred: list[str], gold: list[str]) -> float:
    if not pred or not gold:
        return float(pred == gold)
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(pred), common / len(gold)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, golds: Sequence[str]) -> float:
    """Best token-multiset F1 of the prediction against any gold."""
    if not golds:
        raise ValueError("at least one gold answer is required")
    pred = normalize(prediction)
    return max(_f1_single(pred, normalize(g)) for g in golds)


def gold_in_text(text: str, golds: Sequence[str]) -> bool:
    return em_nonstrict(text, golds) == 1


@dataclass
class EvalResult:
    dataset: str
    mode: str
    count: int
    em: float
    f1: float
    avg: float
    samples: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _sample_id(s):
    return s.id if hasattr(s, "id") else s["id"]


def _golds(s):
    return s.gold_answers if hasattr(s, "gold_answers") else s["answers"]


def _trace_fields(t):
    if isinstance(t, Mapping):
        return t["query_id"], t["answer"]
    return t.query_id, t.answer


def evaluate(dataset: Sequence, traces: Iterable, dataset_id: str = "", mode: str = "") -> EvalResult:
    """EM, F1 and their mean (all in percent) of ``traces`` against ``dataset``.

    Samples may be :class:`~gainrag.synthesis.QASample` objects or dicts with
    ``id``/``answers``; traces may be :class:`~gainrag.inference.InferenceTrace`
    objects or dicts with ``query_id``/``answer``.
    """
    by_id = dict(_trace_fields(t) for t in traces)
    if not by_id:
        raise ValueError("no traces to evaluate")
    if not dataset:
        raise ValueError("empty dataset")
    ems, f1s, rows = [], [], []
    for s in dataset:
        sid = _sample_id(s)
        if sid not in by_id:
            raise KeyError(f"missing trace for sample {sid!r}")
        pred, golds = by_id[sid], _golds(s)
        e, f = em_nonstrict(pred, golds), f1(pred, golds)
        ems.append(e)
        f1s.append(f)
        rows.append({"id": sid, "prediction": pred, "em": e, "f1": f})
    em_pct = 100.0 * sum(ems) / len(ems)
    f1_pct = 100.0 * sum(f1s) / len(f1s)
    return EvalResult(dataset_id, mode, len(rows), em_pct, f1_pct, (em_pct + f1_pct) / 2.0, rows)


def coverage_curves(dataset: Sequence, index, backend, ks: Sequence[int] = (1, 5, 10, 20, 50, 100),
                    template: str = GENERATION_TEMPLATE, max_tokens: int = 32) -> list[dict]:
    """Recall, EM coverage and F1 coverage of the top-k retrieved passages for each k.

    Each passage augments its own generation. A sample is EM-covered at k when
    any of its k generations is EM-correct; F1 coverage averages the per-sample
    best F1. A backend failure counts as an uncovered, zero-F1 generation.
    """
    ks = list(ks)
    if not ks or any(k < 1 for k in ks) or ks != sorted(ks):
        raise ValueError("ks must be positive and sorted ascending")
    kmax = ks[-1]
    recall = [0.0] * len(ks)
    em_cov = [0.0] * len(ks)
    f1_cov = [0.0] * len(ks)
    for s in dataset:
        q, golds = (s.question, s.gold_answers) if hasattr(s, "question") else (s["question"], s["answers"])
        ids = index.retrieve(q, kmax).ids
        hit, em_best, f1_best = [], [], []
        h = e = f = 0.0
        for pid in ids:
            passage = index.passage(pid)
            h = max(h, float(gold_in_text(passage.content(), golds)))
            try:
                pred = backend.complete(generation_prompt(q, passage.content(), template), max_tokens=max_tokens)
                e, f = max(e, float(em_nonstrict(pred, golds))), max(f, f1(pred, golds))
            except Exception as exc:  # noqa: BLE001 - any backend failure is logged and counted as a miss
                logger.warning("coverage: sample %s passage %s failed: %s", _sample_id(s), pid, exc)
            hit.append(h)
            em_best.append(e)
            f1_best.append(f)
        for j, k in enumerate(ks):
            n = min(k, len(ids))
            if n:
                recall[j] += hit[n - 1]
                em_cov[j] += em_best[n - 1]
                f1_cov[j] += f1_best[n - 1]
    total = max(len(dataset), 1)
    return [{"k": k, "recall": recall[j] / total, "em_coverage": em_cov[j] / total,
             "f1_coverage": f1_cov[j] / total} for j, k in enumerate(ks)]


def write_coverage_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["k", "recall", "em_coverage", "f1_coverage"], lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({key: (f"{v:.6f}" if isinstance(v, float) else v) for key, v in row.items()})


def win_tie_lose(traces_a: Iterable, traces_b: Iterable, dataset: Sequence) -> dict[str, int]:
    """Per-sample comparison of mean(EM, F1) between run ``a`` and run ``b``."""
    a = dict(_trace_fields(t) for t in traces_a)
    b = dict(_trace_fields(t) for t in traces_b)
    ids = [_sample_id(s) for s in dataset]
    if set(a) != set(ids) or set(b) != set(ids):
        raise ValueError("trace sets are not aligned with the dataset ids")
    counts = {"win": 0, "tie": 0, "lose": 0}
    for s in dataset:
        sid, golds = _sample_id(s), _golds(s)
        sa = (em_nonstrict(a[sid], golds) + f1(a[sid], golds)) / 2.0
        sb = (em_nonstrict(b[sid], golds) + f1(b[sid], golds)) / 2.0
        counts["win" if sa > sb else "lose" if sa < sb else "tie"] += 1
    return counts
