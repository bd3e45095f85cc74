"""Generator access: prompt completion and per-token continuation scoring.

Two implementations share one surface:

* :class:`MockBackend` is a deterministic, table-driven language model used by
  tests, demos and smoke runs. Tokenization is whitespace splitting.
* :class:`RemoteBackend` speaks a small JSON-over-HTTP contract
  (``POST /v1/complete`` and ``POST /v1/score``).
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import httpx

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "GAINRAG_API_TOKEN"
_NORMALIZATION_TOL = 1e-6
_MOCK_DIST_TOL = 1e-9


class BackendError(RuntimeError):
    """A backend call failed (network, HTTP status, or malformed response)."""


class MalformedResponseError(BackendError):
    pass


class CapabilityError(BackendError):
    """The backend cannot provide what was asked of it (e.g. full distributions)."""


class TokenizationMismatchError(BackendError):
    """Two scorings of the same continuation produced different token lists."""


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    endpoint: str | None = None
    timeout: float = 30.0
    parallelism: int = 4
    full_distributions: bool = False

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if (self.kind == "remote") != bool(self.endpoint):
            raise ValueError("endpoint must be given for remote backends and only for them")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if int(self.parallelism) != self.parallelism or self.parallelism < 1:
            raise ValueError("parallelism must be a positive integer")


@dataclass(frozen=True)
class TokenScoreSeq:
    """Log-probabilities of a fixed continuation, one entry per token.

    ``normalized`` is False only for sequences produced by the approximate
    contrastive adjustment, whose per-token scores are not log-probabilities.
    """

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    full_distributions: tuple[Mapping[str, float], ...] | None = None
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "logprobs", tuple(float(x) for x in self.logprobs))
        if len(self.tokens) != len(self.logprobs):
            raise ValueError("tokens and logprobs differ in length")
        if self.normalized and any(lp > 0.0 for lp in self.logprobs):
            raise ValueError("normalized logprobs must be <= 0")
        if self.full_distributions is not None:
            dists = tuple(dict(d) for d in self.full_distributions)
            if len(dists) != len(self.tokens):
                raise ValueError("one full distribution is required per token")
            for step, dist in enumerate(dists):
                total = math.fsum(math.exp(v) for v in dist.values())
                if abs(total - 1.0) > _NORMALIZATION_TOL:
                    raise ValueError(f"distribution at step {step} sums to {total!r}")
            object.__setattr__(self, "full_distributions", dists)

    def __len__(self):
        return len(self.tokens)


def _check_distribution(dist: Mapping[str, float], vocab: Sequence[str], where: str) -> dict[str, float]:
    missing = set(vocab) - set(dist)
    extra = set(dist) - set(vocab)
    if missing or extra:
        raise ValueError(f"{where}: distribution must cover exactly the vocabulary "
                         f"(missing {sorted(missing)}, unknown {sorted(extra)})")
    if any(not p > 0.0 for p in dist.values()):
        raise ValueError(f"{where}: probabilities must be strictly positive")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > _MOCK_DIST_TOL:
        raise ValueError(f"{where}: distribution sums to {total!r}")
    return {tok: float(dist[tok]) for tok in vocab}


@dataclass
class MockLMSpec:
    """Tables for :class:`MockBackend`.

    ``rules`` and ``completions`` are ordered ``(substring, value)`` pairs; the
    first whose substring occurs in the context (or prompt) wins.
    """

    vocabulary: list[str]
    default: dict[str, float]
    rules: list[tuple[str, dict[str, float]]] = field(default_factory=list)
    completions: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.vocabulary or len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary must be nonempty and duplicate-free")
        if any(not tok or tok != tok.strip() or len(tok.split()) != 1 for tok in self.vocabulary):
            raise ValueError("vocabulary tokens must be single whitespace-free words")
        self.default = _check_distribution(self.default, self.vocabulary, "default")
        self.rules = [(str(when), _check_distribution(dist, self.vocabulary, f"rule {i}"))
                      for i, (when, dist) in enumerate(self.rules)]
        self.completions = [(str(when), str(text)) for when, text in self.completions]

    @classmethod
    def uniform(cls, vocabulary: Sequence[str], **kwargs) -> "MockLMSpec":
        p = 1.0 / len(vocabulary)
        return cls(list(vocabulary), {tok: p for tok in vocabulary}, **kwargs)

    def to_dict(self) -> dict:
        return {
            "vocabulary": list(self.vocabulary),
            "default": dict(self.default),
            "rules": [{"when": w, "distribution": dict(d)} for w, d in self.rules],
            "completions": [{"when": w, "text": t} for w, t in self.completions],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MockLMSpec":
        return cls(
            vocabulary=list(data["vocabulary"]),
            default=dict(data["default"]),
            rules=[(r["when"], dict(r["distribution"])) for r in data.get("rules", [])],
            completions=[(c["when"], c["text"]) for c in data.get("completions", [])],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MockLMSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _truncate(text: str, max_tokens: int, stop: Sequence[str] | None) -> str:
    words = text.split()
    if stop:
        for i, w in enumerate(words):
            if w in stop:
                words = words[:i]
                break
    if len(words) > max_tokens:
        words = words[:max_tokens]
    return text if words == text.split() else " ".join(words)


class MockBackend:
    """Deterministic table-driven generator.

    Completion returns the text of the first completion entry whose substring
    occurs in the prompt (truncated to ``max_tokens`` whitespace tokens and at
    the first ``stop`` token), or ``""``. Scoring splits the continuation on
    whitespace; the distribution for step ``j`` comes from the first rule whose
    substring occurs in ``context`` followed by the already-scored tokens.
    """

    def __init__(self, spec: MockLMSpec, parallelism: int = 1):
        self.spec = spec
        self.descriptor = BackendDescriptor(kind="mock", parallelism=parallelism, full_distributions=True)
        self._log_default = {t: math.log(p) for t, p in spec.default.items()}
        self._log_rules = [(w, {t: math.log(p) for t, p in d.items()}) for w, d in spec.rules]

    @property
    def supports_full_distributions(self) -> bool:
        return True

    def complete(self, prompt: str, max_tokens: int = 64, stop: Sequence[str] | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        if max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        for when, text in self.spec.completions:
            if when in prompt:
                return _truncate(text, max_tokens, stop)
        return ""

    def _step_distribution(self, prefix: str) -> dict[str, float]:
        for when, dist in self._log_rules:
            if when in prefix:
                return dist
        return self._log_default

    def score_continuation(self, context: str, continuation: str,
                           want_full_distributions: bool = False) -> TokenScoreSeq:
        tokens = continuation.split()
        if not tokens:
            raise ValueError("continuation must be nonempty")
        logprobs, dists = [], []
        for j, tok in enumerate(tokens):
            prefix = context if j == 0 else context + " " + " ".join(tokens[:j])
            dist = self._step_distribution(prefix)
            if tok not in dist:
                raise BackendError(f"token {tok!r} is outside the mock vocabulary")
            logprobs.append(dist[tok])
            dists.append(dist)
        return TokenScoreSeq(tokens, logprobs, dists if want_full_distributions else None)


class RemoteBackend:
    """HTTP client for the ``/v1/complete`` + ``/v1/score`` contract.

    At most ``descriptor.parallelism`` requests are in flight at once, across
    all threads sharing the instance. A transport failure (connection error,
    timeout) is retried once; HTTP error statuses are not retried.
    """

    def __init__(self, descriptor: BackendDescriptor, token: str | None = None,
                 transport: httpx.BaseTransport | None = None):
        if descriptor.kind != "remote":
            raise ValueError("RemoteBackend requires a remote descriptor")
        self.descriptor = descriptor
        token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(base_url=descriptor.endpoint.rstrip("/"), timeout=descriptor.timeout,
                                    headers=headers, transport=transport)
        self._slots = threading.BoundedSemaphore(descriptor.parallelism)

    @property
    def supports_full_distributions(self) -> bool:
        return self.descriptor.full_distributions

    def close(self):
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        with self._slots:
            for attempt in (1, 2):
                try:
                    resp = self._client.post(path, json=payload)
                    break
                except httpx.TransportError as exc:
                    if attempt == 2:
                        raise BackendError(f"backend request failed: {type(exc).__name__}: {exc}") from exc
                    logger.warning("transient failure on %s (%s), retrying once", path, exc)
        if resp.status_code != 200:
            raise BackendError(f"backend request failed: HTTP {resp.status_code} on {path}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"malformed response from {path}: not JSON") from exc
        if not isinstance(body, dict):
            raise MalformedResponseError(f"malformed response from {path}: expected an object")
        return body

    def complete(self, prompt: str, max_tokens: int = 64, stop: Sequence[str] | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        body = self._post("/v1/complete", {"prompt": prompt, "max_tokens": int(max_tokens), "stop": list(stop or [])})
        text = body.get("text")
        if not isinstance(text, str):
            raise MalformedResponseError("malformed response from /v1/complete: missing 'text'")
        return text

    def score_continuation(self, context: str, continuation: str,
                           want_full_distributions: bool = False) -> TokenScoreSeq:
        if not continuation:
            raise ValueError("continuation must be nonempty")
        if want_full_distributions and not self.supports_full_distributions:
            raise CapabilityError("backend does not expose full per-step distributions")
        body = self._post("/v1/score", {"context": context, "continuation": continuation,
                                        "full": bool(want_full_distributions)})
        try:
            tokens = [str(t) for t in body["tokens"]]
            logprobs = [float(x) for x in body["logprobs"]]
            full = body.get("full_distributions") if want_full_distributions else None
            if want_full_distributions and full is None:
                raise MalformedResponseError("malformed response from /v1/score: missing full_distributions")
            if not tokens or any(not math.isfinite(x) for x in logprobs):
                raise ValueError("empty token list or non-finite logprob")
            return TokenScoreSeq(tokens, logprobs, full)
        except MalformedResponseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"malformed response from /v1/score: {exc}") from exc


def make_backend(descriptor: BackendDescriptor, mock_spec: MockLMSpec | None = None):
    if descriptor.kind == "mock":
        if mock_spec is None:
            raise ValueError("a mock backend needs a MockLMSpec")
        return MockBackend(mock_spec, parallelism=descriptor.parallelism)
    return RemoteBackend(descriptor)
