"""Pipeline configuration: one JSON document, defaults filled in, dotted overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .gain import GainConfig
from .lm_backend import BackendDescriptor
from .prompts import GENERATION_TEMPLATE, PSEUDO_PASSAGE_TEMPLATE
from .selector import TrainConfig

DEFAULTS: dict[str, Any] = {
    "backend": {"kind": "mock", "endpoint": None, "timeout": 30.0, "parallelism": 4,
                "full_distributions": False, "mock_spec": None},
    "corpus": None,
    "train_dataset": None,
    "eval_dataset": None,
    "external_scores": None,
    "retrieval": {"k": 100, "synthesis_k": 20, "k1": 1.2, "b": 0.75},
    "gain": {"alpha": 0.5, "mode": "exact"},
    "pseudo": {"enabled": True, "max_tokens": 160, "drop_unavailable": True},
    "groups": {"size": 16, "filter": True},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.05, "hidden": 16, "temperature": 1.0},
    "inference": {"modes": ["gainrag", "standard-rag", "pseudo-only", "no-retrieval"], "max_tokens": 32},
    "coverage": {"ks": [1, 5, 10, 20, 50, 100]},
    "compare": {"a": "gainrag", "b": "standard-rag"},
    "templates": {"generation": GENERATION_TEMPLATE, "pseudo_passage": PSEUDO_PASSAGE_TEMPLATE},
    "seed": 0,
    "output_dir": "out",
}

PATH_FIELDS = ("backend.mock_spec", "corpus", "train_dataset", "eval_dataset", "external_scores", "output_dir")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path}: {message}")
        self.path = path


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _check_types(cfg: dict, defaults: dict, prefix: str = "") -> None:
    for key, default in defaults.items():
        where, value = f"{prefix}{key}", cfg[key]
        if isinstance(default, dict):
            _check_types(value, default, where + ".")
        elif default is None:
            if value is not None and not isinstance(value, str):
                raise ConfigError(where, "expected a string or null")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(where, "expected true or false")
        elif isinstance(default, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(where, "expected a number")
            if isinstance(default, int) and not isinstance(default, bool) and int(value) != value:
                raise ConfigError(where, "expected an integer")
        elif not isinstance(value, type(default)):
            raise ConfigError(where, f"expected {type(default).__name__}")


def parse_override(item: str) -> tuple[str, Any]:
    """``a.b=value``; the value is parsed as JSON when possible, else taken as a string."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def _nest(key: str, value: Any) -> dict:
    out: dict = {}
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def _get(cfg: dict, dotted: str):
    node = cfg
    for p in dotted.split("."):
        node = node[p]
    return node


def _set(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node[p]
    node[parts[-1]] = value


def resolve(raw: dict, base_dir=".", overrides: list[str] = ()) -> dict:
    """Merge ``raw`` and ``overrides`` over :data:`DEFAULTS`, validate, and absolutize paths."""
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        cfg = _merge(cfg, _nest(*parse_override(item)))
    _check_types(cfg, DEFAULTS)
    base = Path(base_dir)
    for dotted in PATH_FIELDS:
        value = _get(cfg, dotted)
        if value is not None:
            _set(cfg, dotted, str((base / value).resolve()))
    module_configs(cfg)
    return cfg


def load(path, overrides: list[str] = ()) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except ValueError as exc:
        raise ConfigError(str(path), f"not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "expected a JSON object")
    return resolve(raw, path.parent, overrides)


def module_configs(cfg: dict) -> dict:
    """Typed configs for the modules; constraint violations name the offending section."""
    out = {}
    for section, build in (
        ("backend", lambda c: BackendDescriptor(kind=c["kind"], endpoint=c["endpoint"], timeout=float(c["timeout"]),
                                                parallelism=int(c["parallelism"]),
                                                full_distributions=c["full_distributions"])),
        ("gain", lambda c: GainConfig(alpha=float(c["alpha"]), mode=c["mode"],
                                      template=cfg["templates"]["generation"])),
        ("train", lambda c: TrainConfig(epochs=int(c["epochs"]), batch_size=int(c["batch_size"]),
                                        learning_rate=float(c["learning_rate"]), hidden=int(c["hidden"]),
                                        seed=int(cfg["seed"]), temperature=float(c["temperature"]))),
    ):
        try:
            out[section] = build(cfg[section])
        except ValueError as exc:
            first = str(exc).split()[0] if str(exc) else ""
            field = f"{section}.{first}" if first in cfg[section] else section
            raise ConfigError(field, str(exc)) from None
    if cfg["backend"]["kind"] == "mock" and not cfg["backend"]["mock_spec"]:
        raise ConfigError("backend.mock_spec", "a mock backend needs a mock_spec file")
    for key in ("k", "synthesis_k"):
        if cfg["retrieval"][key] < 1:
            raise ConfigError(f"retrieval.{key}", "must be >= 1")
    if cfg["groups"]["size"] < 1:
        raise ConfigError("groups.size", "must be >= 1")
    ks = cfg["coverage"]["ks"]
    if not ks or ks != sorted(ks) or any(not isinstance(k, int) or k < 1 for k in ks):
        raise ConfigError("coverage.ks", "must be positive integers in ascending order")
    return out
