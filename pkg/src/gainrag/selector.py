"""Learned passage selector.

A small feature-based scorer ``f(q, c)`` (one tanh hidden layer) is fitted so
that, within each candidate group, ``softmax(scores)`` matches
``softmax(labels)`` under KL divergence. At inference the highest-scoring
candidate is chosen.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .retrieval import Passage, tokenize

MODEL_FORMAT = "gainrag-selector"
MODEL_VERSION = 1

# Small orthogonal hidden weights keep early training close to a linear model.
_INIT_GAIN = 0.25

OVERLAP = "overlap"
IDF_OVERLAP = "idf_overlap"
RETRIEVAL_SCORE = "retrieval_score"
LOG_PASSAGE_LEN = "log_passage_len"
LOG_QUERY_LEN = "log_query_len"
IS_PSEUDO = "is_pseudo"
BIGRAM_OVERLAP = "bigram_overlap"

ALL_FEATURES = (OVERLAP, IDF_OVERLAP, RETRIEVAL_SCORE, LOG_PASSAGE_LEN, LOG_QUERY_LEN, IS_PSEUDO, BIGRAM_OVERLAP)


class ModelFileError(ValueError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class FeatureConfig:
    names: tuple[str, ...] = ALL_FEATURES
    mean: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    idf: Mapping[str, float] = field(default_factory=dict)
    default_idf: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        unknown = set(self.names) - set(ALL_FEATURES)
        if unknown or len(set(self.names)) != len(self.names) or not self.names:
            raise ValueError(f"bad feature list {self.names}")
        d = len(self.names)
        mean = tuple(float(x) for x in self.mean) if self.mean is not None else (0.0,) * d
        scale = tuple(float(x) for x in self.scale) if self.scale is not None else (1.0,) * d
        if len(mean) != d or len(scale) != d:
            raise ValueError("normalization constants do not match the feature list")
        if any(not s > 0 for s in scale):
            raise ValueError("feature scales must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return len(self.names)

    def fitted(self, raw: np.ndarray) -> "FeatureConfig":
        """Copy with mean/scale estimated from raw feature rows (scale 1 for constant columns)."""
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        scale = np.where(std > 1e-12, std, 1.0)
        return replace(self, mean=tuple(mean.tolist()), scale=tuple(scale.tolist()))


def _bigrams(tokens: Sequence[str]) -> set[tuple[str, str]]:
    return set(zip(tokens, tokens[1:]))


def raw_features(q: str, c: Passage, retrieval_score: float, config: FeatureConfig) -> np.ndarray:
    qt, ct = tokenize(q), tokenize(c.content())
    qs, cs = set(qt), set(ct)
    values = {}
    for name in config.names:
        if name == OVERLAP:
            values[name] = len(qs & cs) / len(qs) if qs else 0.0
        elif name == IDF_OVERLAP:
            w = {t: config.idf.get(t, config.default_idf) for t in qs}
            total = math.fsum(w.values())
            values[name] = math.fsum(w[t] for t in sorted(qs & cs)) / total if total > 0 else 0.0
        elif name == RETRIEVAL_SCORE:
            values[name] = 0.0 if c.is_pseudo else float(retrieval_score)
        elif name == LOG_PASSAGE_LEN:
            values[name] = math.log1p(len(ct))
        elif name == LOG_QUERY_LEN:
            values[name] = math.log1p(len(qt))
        elif name == IS_PSEUDO:
            values[name] = 1.0 if c.is_pseudo else 0.0
        elif name == BIGRAM_OVERLAP:
            qb = _bigrams(qt)
            values[name] = len(qb & _bigrams(ct)) / len(qb) if qb else 0.0
    return np.array([values[n] for n in config.names], dtype=float)


def featurize(q: str, c: Passage, retrieval_score: float, config: FeatureConfig) -> np.ndarray:
    """Normalized feature vector, ordered as ``config.names``."""
    raw = raw_features(q, c, retrieval_score, config)
    return (raw - np.asarray(config.mean)) / np.asarray(config.scale)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 8
    learning_rate: float = 0.05
    hidden: int = 16
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "hidden", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(eq=False)
class SelectorModel:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    features: FeatureConfig
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.b2 = float(self.b2)
        h = self.b1.shape[0]
        if h < 1 or self.W1.ndim != 2 or self.W1.shape[0] != h or self.w2.shape != (h,):
            raise ValueError("inconsistent layer shapes")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.w2)) or not math.isfinite(self.b2):
            raise ValueError("weights must be finite")

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    @classmethod
    def zeros(cls, features: FeatureConfig, hidden: int = 16) -> "SelectorModel":
        return cls(np.zeros((hidden, features.dim)), np.zeros(hidden), np.zeros(hidden), 0.0, features)

    @classmethod
    def initialized(cls, features: FeatureConfig, hidden: int, rng: np.random.Generator) -> "SelectorModel":
        d = features.dim
        a = rng.normal(size=(max(hidden, d), min(hidden, d)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        W1 = _INIT_GAIN * (q if hidden >= d else q.T)
        w2 = np.zeros(hidden)
        return cls(W1, np.zeros(hidden), w2, 0.0, features)

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.w2, np.array([self.b2])]

    def forward(self, X: np.ndarray) -> np.ndarray:
        if X.shape[-1] != self.W1.shape[1]:
            raise ValueError(f"feature-count mismatch: model expects {self.W1.shape[1]}, got {X.shape[-1]}")
        return np.tanh(X @ self.W1.T + self.b1) @ self.w2 + self.b2


def _check_pair(V, V_hat, temperature):
    V, V_hat = np.asarray(V, dtype=float), np.asarray(V_hat, dtype=float)
    if V.shape != V_hat.shape or V.ndim != 1:
        raise ValueError(f"label/score length mismatch: {V.shape} vs {V_hat.shape}")
    if V.size < 2:
        raise ValueError("a group needs at least two members")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    return V, V_hat


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    return z - np.log(np.sum(np.exp(z)))


def softmax(x: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(x, dtype=float)))


def kl_loss(V, V_hat, temperature: float = 1.0) -> float:
    """``KL(softmax(V / t) || softmax(V_hat / t))``."""
    V, V_hat = _check_pair(V, V_hat, temperature)
    log_p, log_q = log_softmax(V / temperature), log_softmax(V_hat / temperature)
    return max(float(np.sum(np.exp(log_p) * (log_p - log_q))), 0.0)


def kl_grad(V, V_hat, temperature: float = 1.0) -> np.ndarray:
    """Gradient of :func:`kl_loss` with respect to ``V_hat``: ``(Q - P) / t``."""
    V, V_hat = _check_pair(V, V_hat, temperature)
    return (softmax(V_hat / temperature) - softmax(V / temperature)) / temperature


def group_loss_and_grad(model: SelectorModel, X: np.ndarray, V: np.ndarray,
                        temperature: float = 1.0) -> tuple[float, list[np.ndarray]]:
    """KL loss of one group and its gradient w.r.t. ``model.params()``."""
    Z = X @ model.W1.T + model.b1
    H = np.tanh(Z)
    s = H @ model.w2 + model.b2
    loss = kl_loss(V, s, temperature)
    ds = kl_grad(V, s, temperature)
    dZ = np.outer(ds, model.w2) * (1.0 - H * H)
    return loss, [dZ.T @ X, dZ.sum(axis=0), H.T @ ds, np.array([ds.sum()])]


def _with_params(model: SelectorModel, params: Sequence[np.ndarray]) -> SelectorModel:
    W1, b1, w2, b2 = params
    return SelectorModel(W1, b1, w2, float(b2[0]), model.features, model.metadata)


def group_features(group, config: FeatureConfig, normalized: bool = True) -> np.ndarray:
    fn = featurize if normalized else raw_features
    return np.stack([fn(group.question, m.passage, m.record.retrieval_score, config) for m in group.members])


def train(groups: Sequence, config: TrainConfig = TrainConfig(),
          features: FeatureConfig | None = None) -> SelectorModel:
    """Fit a selector by mini-batch gradient descent on mean per-group KL loss.

    ``groups`` are :class:`~gainrag.synthesis.TrainingGroup` objects.
    Normalization constants are fitted on the training features first. The
    full-data loss after each epoch is kept in ``metadata["loss_curve"]``.
    """
    if not groups:
        raise ValueError("no training groups")
    if any(g.size < 2 for g in groups):
        raise ValueError("every training group needs at least two members")
    features = features or FeatureConfig()
    raw = [group_features(g, features, normalized=False) for g in groups]
    features = features.fitted(np.concatenate(raw))
    mean, scale = np.asarray(features.mean), np.asarray(features.scale)
    Xs = [(x - mean) / scale for x in raw]
    Vs = [np.asarray(g.labels, dtype=float) for g in groups]

    rng = np.random.default_rng(config.seed)
    model = SelectorModel.initialized(features, config.hidden, rng)
    params = model.params()
    tau = config.temperature
    curve = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(groups))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = [np.zeros_like(p) for p in params]
            for i in batch:
                _, g = group_loss_and_grad(model, Xs[i], Vs[i], tau)
                for acc, gi in zip(grads, g):
                    acc += gi
            params = [p - config.learning_rate * gi / len(batch) for p, gi in zip(params, grads)]
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch)
            model = _with_params(model, params)
        loss = float(np.mean([kl_loss(V, model.forward(X), tau) for X, V in zip(Xs, Vs)]))
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch)
        curve.append(loss)
    model.metadata = {"epochs": config.epochs, "seed": config.seed, "batch_size": config.batch_size,
                      "learning_rate": config.learning_rate, "temperature": tau,
                      "groups": len(groups), "loss_curve": curve}
    return model


def score(model: SelectorModel, q: str, c: Passage, retrieval_score: float = 0.0) -> float:
    if model.W1.shape[1] != model.features.dim:
        raise ValueError(f"feature-count mismatch: model has {model.W1.shape[1]} inputs, "
                         f"config lists {model.features.dim} features")
    return float(model.forward(featurize(q, c, retrieval_score, model.features)[None, :])[0])


def score_candidates(model: SelectorModel, q: str, candidates: Sequence[tuple[Passage, float]]) -> list[float]:
    return [score(model, q, p, s) for p, s in candidates]


def argmax_first(values: Sequence[float]) -> int:
    """Index of the maximum, lowest index on ties."""
    if len(values) == 0:
        raise ValueError("no candidates")
    return int(np.argmax(np.asarray(values, dtype=float)))


def select_best(model: SelectorModel, q: str, candidates: Sequence[tuple[Passage, float]]) -> Passage:
    if not candidates:
        raise ValueError("no candidates to select from")
    return candidates[argmax_first(score_candidates(model, q, candidates))][0]


def _payload(model: SelectorModel) -> dict:
    f = model.features
    return {
        "features": {"names": list(f.names), "mean": list(f.mean), "scale": list(f.scale),
                     "idf": dict(sorted(f.idf.items())), "default_idf": f.default_idf},
        "W1": model.W1.tolist(), "b1": model.b1.tolist(), "w2": model.w2.tolist(), "b2": model.b2,
        "metadata": model.metadata,
    }


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_model(model: SelectorModel, path) -> None:
    payload = _payload(model)
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "checksum": _checksum(payload), "payload": payload}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> SelectorModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        payload, found = doc["payload"], doc.get("version")
    except (ValueError, KeyError, TypeError) as exc:
        raise ChecksumError(f"corrupt model file {path}: checksum cannot be verified ({exc})") from None
    if doc.get("format") != MODEL_FORMAT or found != MODEL_VERSION:
        raise VersionMismatchError(f"model file version mismatch: expected {MODEL_FORMAT} v{MODEL_VERSION}, "
                                   f"found {doc.get('format')} v{found}")
    if _checksum(payload) != doc.get("checksum"):
        raise ChecksumError(f"model file {path} failed its checksum")
    f = payload["features"]
    features = FeatureConfig(tuple(f["names"]), tuple(f["mean"]), tuple(f["scale"]), f["idf"], f["default_idf"])
    W1 = np.array(payload["W1"], dtype=float).reshape(len(payload["b1"]), -1)
    if W1.shape[1] != features.dim:
        raise ModelFileError(f"feature-count mismatch: weights have {W1.shape[1]} inputs, "
                             f"config lists {features.dim} features")
    return SelectorModel(W1, payload["b1"], payload["w2"], payload["b2"], features, payload["metadata"])
