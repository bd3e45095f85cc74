"""``gainrag`` command line.

Every command reads one JSON config (``--config``), applies ``--set a.b=value``
overrides, writes its artifacts plus ``config.resolved.json`` into the output
directory, and prints a one-line JSON summary.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import _jsonl
from . import config as cfgmod
from .evaluation import coverage_curves, evaluate, win_tie_lose, write_coverage_csv
from .inference import MODES, answer_all, read_traces, write_traces
from .lm_backend import MockLMSpec, make_backend
from .retrieval import build_index, import_external_scores, ingest_corpus, retrieve_external
from .selector import FeatureConfig, load_model, save_model, train
from .synthesis import assemble_groups, filter_groups, load_qa, read_pseudo, read_records, synthesize

logger = logging.getLogger("gainrag")

COMMANDS = ("ingest", "retrieve", "synthesize", "train", "infer", "evaluate", "coverage", "compare")
HELP = {
    "ingest": "load the corpus and write index statistics",
    "retrieve": "retrieve top-k passages for the eval questions",
    "synthesize": "compute gain records for the training questions",
    "train": "group, filter and distill gain records into a selector",
    "infer": "answer the eval questions in each configured mode",
    "evaluate": "score traces with EM / F1 / Avg",
    "coverage": "recall and EM/F1 coverage as a function of k",
    "compare": "win/tie/lose counts between two modes",
}


class Run:
    """Resolved config plus lazily built shared objects for one command."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.typed = cfgmod.module_configs(cfg)
        self.out = Path(cfg["output_dir"])
        self._index = self._backend = None

    def require(self, *fields):
        for f in fields:
            value = cfgmod._get(self.cfg, f)
            if value is None:
                raise cfgmod.ConfigError(f, "required by this command")
            if not Path(value).exists():
                raise cfgmod.ConfigError(f, f"file not found: {value}")

    @property
    def index(self):
        if self._index is None:
            r = self.cfg["retrieval"]
            self._index = build_index(ingest_corpus(self.cfg["corpus"]), k1=r["k1"], b=r["b"])
        return self._index

    @property
    def backend(self):
        if self._backend is None:
            b = self.cfg["backend"]
            spec = MockLMSpec.load(b["mock_spec"]) if b["kind"] == "mock" else None
            self._backend = make_backend(self.typed["backend"], spec)
        return self._backend

    def retriever(self):
        path = self.cfg["external_scores"]
        if path is None:
            return None
        table = import_external_scores(path)

        def external(query_id, query, k):
            return retrieve_external(table, query_id, k, query=query)
        return external

    def path(self, name: str) -> Path:
        return self.out / name

    def pseudo_kwargs(self) -> dict:
        return {"pseudo_template": self.cfg["templates"]["pseudo_passage"],
                "pseudo_max_tokens": self.cfg["pseudo"]["max_tokens"]}


def cmd_ingest(run: Run) -> dict:
    run.require("corpus")
    stats = run.index.stats()
    (run.path("index_stats.json")).write_text(json.dumps(stats, sort_keys=True, indent=1) + "\n")
    return {"passages": stats["doc_count"], "vocab_size": stats["vocab_size"]}


def cmd_retrieve(run: Run) -> dict:
    run.require("corpus", "eval_dataset")
    k = run.cfg["retrieval"]["k"]
    ext = run.retriever()
    rows = []
    for s in load_qa(run.cfg["eval_dataset"]):
        res = ext(s.id, s.question, k) if ext else run.index.retrieve(s.question, k)
        rows.append({"query_id": s.id, "entries": [[pid, score] for pid, score in res.entries]})
    _jsonl.write_jsonl(run.path("retrieval.jsonl"), rows)
    return {"queries": len(rows)}


def cmd_synthesize(run: Run) -> dict:
    run.require("corpus", "train_dataset")
    dataset = load_qa(run.cfg["train_dataset"])
    result = synthesize(
        dataset, run.index, run.backend, run.cfg["retrieval"]["synthesis_k"], run.typed["gain"],
        use_pseudo=run.cfg["pseudo"]["enabled"], drop_unavailable=run.cfg["pseudo"]["drop_unavailable"],
        retriever=run.retriever(), records_path=run.path("gain_records.jsonl"),
        pseudo_path=run.path("pseudo_passages.jsonl"), failures_path=run.path("synthesis_failures.jsonl"),
        **run.pseudo_kwargs())
    return {"samples": len(dataset), "records": len(result.records), "failures": len(result.failures),
            "gain_mode": run.typed["gain"].mode}


def cmd_train(run: Run) -> dict:
    run.require("corpus", "train_dataset")
    for name in ("gain_records.jsonl", "pseudo_passages.jsonl"):
        if not run.path(name).exists():
            raise cfgmod.ConfigError("output_dir", f"{name} missing; run synthesize first")
    dataset = load_qa(run.cfg["train_dataset"])
    records = read_records(run.path("gain_records.jsonl"))
    pseudo = {p.id: p for p in read_pseudo(run.path("pseudo_passages.jsonl")).values() if p is not None}

    def lookup(pid):
        return pseudo[pid] if pid in pseudo else run.index.passage(pid)

    groups = assemble_groups(records, {s.id: s.question for s in dataset}, lookup,
                             run.cfg["groups"]["size"], run.cfg["seed"])
    report = {"kept": len(groups), "dropped": 0, "reasons": {}}
    if run.cfg["groups"]["filter"]:
        groups, report = filter_groups(groups, run.backend, {s.id: s.gold_answers for s in dataset},
                                       run.cfg["templates"]["generation"], run.cfg["inference"]["max_tokens"])
    groups = [g for g in groups if g.size >= 2]
    (run.path("filter_report.json")).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    _jsonl.write_jsonl(run.path("groups.jsonl"), ({"query_id": g.query_id,
                                                    "members": [m.passage.id for m in g.members]} for g in groups))
    model = train(groups, run.typed["train"], FeatureConfig(idf=dict(run.index.idf)))
    save_model(model, run.path("selector.json"))
    return {"groups": len(groups), "kept": report["kept"], "dropped": report["dropped"],
            "final_loss": model.metadata["loss_curve"][-1]}


def _modes(run: Run) -> list[str]:
    modes = run.cfg["inference"]["modes"]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise cfgmod.ConfigError("inference.modes", f"unknown modes {bad}")
    return modes


def cmd_infer(run: Run) -> dict:
    run.require("corpus", "eval_dataset")
    modes = _modes(run)
    model = None
    if "gainrag" in modes:
        if not run.path("selector.json").exists():
            raise cfgmod.ConfigError("output_dir", "selector.json missing; run train first")
        model = load_model(run.path("selector.json"))
    dataset = load_qa(run.cfg["eval_dataset"])
    (run.out / "timings").mkdir(exist_ok=True)
    for mode in modes:
        traces = answer_all(dataset, run.backend, run.index, model, run.cfg["retrieval"]["k"], mode,
                            use_pseudo=run.cfg["pseudo"]["enabled"], retriever=run.retriever(),
                            generation_template=run.cfg["templates"]["generation"],
                            max_tokens=run.cfg["inference"]["max_tokens"], **run.pseudo_kwargs())
        write_traces(run.path(f"traces_{mode}.jsonl"), traces, run.out / "timings" / f"timings_{mode}.jsonl")
    return {"queries": len(dataset), "modes": modes}


def cmd_evaluate(run: Run) -> dict:
    run.require("eval_dataset")
    dataset = load_qa(run.cfg["eval_dataset"])
    summary = {}
    for mode in _modes(run):
        path = run.path(f"traces_{mode}.jsonl")
        if not path.exists():
            raise cfgmod.ConfigError("output_dir", f"{path.name} missing; run infer first")
        res = evaluate(dataset, read_traces(path), Path(run.cfg["eval_dataset"]).stem, mode)
        (run.path(f"eval_{mode}.json")).write_text(json.dumps(res.to_dict(), sort_keys=True, indent=1) + "\n")
        summary[mode] = {"em": res.em, "f1": res.f1, "avg": res.avg}
    return summary


def cmd_coverage(run: Run) -> dict:
    run.require("corpus", "eval_dataset")
    rows = coverage_curves(load_qa(run.cfg["eval_dataset"]), run.index, run.backend, run.cfg["coverage"]["ks"],
                           run.cfg["templates"]["generation"], run.cfg["inference"]["max_tokens"])
    write_coverage_csv(run.path("coverage.csv"), rows)
    return {"ks": [r["k"] for r in rows], "recall": [r["recall"] for r in rows]}


def cmd_compare(run: Run) -> dict:
    run.require("eval_dataset")
    a, b = run.cfg["compare"]["a"], run.cfg["compare"]["b"]
    dataset = load_qa(run.cfg["eval_dataset"])
    counts = win_tie_lose(read_traces(run.path(f"traces_{a}.jsonl")), read_traces(run.path(f"traces_{b}.jsonl")),
                          dataset)
    result = {"a": a, "b": b, **counts}
    (run.path("compare.json")).write_text(json.dumps(result, sort_keys=True, indent=1) + "\n")
    return counts


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gainrag", description="Gain-oriented passage selection pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. gain.alpha=0.3 (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config, args.overrides)
        run = Run(cfg)
        run.out.mkdir(parents=True, exist_ok=True)
        run.path("config.resolved.json").write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n")
        summary = HANDLERS[args.command](run)
    except Exception as exc:  # noqa: BLE001 - report any failure as a nonzero exit
        print(json.dumps({"command": args.command, "status": "error", "error": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "status": "ok", **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
