"""``lexgraph`` command-line interface, one subcommand per pipeline stage.

Every command writes its primary output to ``--out`` and a sidecar
``<out>.meta.json`` holding the timestamp, seed and input digests, so that
primary outputs are byte-identical across reruns with the same inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, resolve_config
from .corpus import load_corpus
from .embed import get_embedder
from .graph import build_graph, export_graphml, load_graph, save_graph
from .judge import (
    ExternalJudge,
    export_trail,
    judge_classification,
    judge_retrieval,
)
from .metrics import DEFAULT_KS, evaluate_run, format_run, load_qrels, load_run, relevant_sets, report_json
from .retrieve import (
    PolicyParameters,
    RetrievalResult,
    beam_search,
    rank_documents,
    result_from_dict,
    result_to_dict,
)
from .rules import Classification, classify, explain, load_rules
from .train import load_queries, train_policy

logger = logging.getLogger("lexgraph")


class UsageError(Exception):
    pass


def _dump(data) -> bytes:
    return (json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _jsonl(rows) -> bytes:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows).encode("utf-8")


def _write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(cfg: PipelineConfig, key: str) -> Path:
    path = cfg.path(key)
    if path is None:
        raise UsageError(f"missing required input --{key}")
    if not path.exists():
        raise FileNotFoundError(f"{key} input not found: {path}")
    return path


def _out(args) -> Path:
    if not args.out:
        raise UsageError("missing --out")
    return Path(args.out)


def _write_meta(out: Path, command: str, cfg: PipelineConfig, inputs: dict[str, Path], extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": cfg.seed,
        "version": __version__,
        "inputs": {k: {"path": str(p), "sha256": _digest(p)} for k, p in inputs.items() if p.is_file()},
    }
    if extra:
        meta.update(extra)
    _write(_sidecar(out, ".meta.json"), _dump(meta))


def _load_classifications(path: Path) -> list[Classification]:
    data = json.loads(path.read_text(encoding="utf-8"))
    try:
        return [Classification.from_dict(c) for c in data["classifications"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed classifications file ({exc!r})") from None


# --- commands -----------------------------------------------------------------

def cmd_classify(args, cfg: PipelineConfig) -> None:
    corpus_path, rules_path = _require(cfg, "corpus"), _require(cfg, "rules")
    out = _out(args)
    corpus, rules = load_corpus(corpus_path), load_rules(rules_path)

    rows, explanations = [], []
    for doc in corpus:
        for c in classify(doc, rules):
            rows.append(c.to_dict())
            explanations.append(explain(c, rules, doc).to_dict())
    payload = {
        "seed": cfg.seed,
        "min_matches": rules.min_matches,
        "saturation": rules.saturation,
        "classifications": rows,
    }
    _write(out, _dump(payload))
    _write(_sidecar(out, ".explanations.jsonl"), _jsonl(explanations))
    _write_meta(out, "classify", cfg, {"corpus": corpus_path, "rules": rules_path})
    logger.info("classified %d documents into %d labels", len(corpus), len(rows))


def cmd_build_graph(args, cfg: PipelineConfig) -> None:
    corpus_path, cls_path = _require(cfg, "corpus"), _require(cfg, "classifications")
    out = _out(args)
    inputs = {"corpus": corpus_path, "classifications": cls_path}
    rules = None
    if cfg.path("rules") is not None:
        inputs["rules"] = _require(cfg, "rules")
        rules = load_rules(inputs["rules"])
    g = build_graph(load_corpus(corpus_path), _load_classifications(cls_path), rules, meta={"seed": cfg.seed})
    _write(out, save_graph(g))
    if args.graphml:
        _write(Path(args.graphml), export_graphml(g))
    _write_meta(out, "build-graph", cfg, inputs)
    logger.info("graph: %d nodes, %d edges", len(g.nodes), len(g.edges))


def cmd_export_graph(args, cfg: PipelineConfig) -> None:
    graph_path = _require(cfg, "graph")
    out = _out(args)
    _write(out, export_graphml(load_graph(graph_path.read_bytes())))


def cmd_train(args, cfg: PipelineConfig) -> None:
    graph_path, queries_path, qrels_path = _require(cfg, "graph"), _require(cfg, "queries"), _require(cfg, "qrels")
    out = _out(args)
    g = load_graph(graph_path.read_bytes())
    initial = None
    if cfg.path("policy") is not None:
        initial = PolicyParameters.from_json(_require(cfg, "policy").read_text(encoding="utf-8"))
    policy = train_policy(
        g,
        load_queries(queries_path),
        relevant_sets(load_qrels(qrels_path)),
        cfg.beam,
        cfg.weights,
        get_embedder(cfg.embed_url),
        cfg.hyper,
        initial,
    )
    _write(out, policy.to_json().encode("utf-8"))
    _write_meta(out, "train", cfg, {"graph": graph_path, "queries": queries_path, "qrels": qrels_path})
    logger.info("trained policy v%d theta=%s", policy.version, [round(t, 4) for t in policy.theta])


def cmd_retrieve(args, cfg: PipelineConfig) -> None:
    graph_path = _require(cfg, "graph")
    out = _out(args)
    inputs = {"graph": graph_path}
    g = load_graph(graph_path.read_bytes())
    policy = PolicyParameters()
    if cfg.path("policy") is not None:
        inputs["policy"] = _require(cfg, "policy")
        policy = PolicyParameters.from_json(inputs["policy"].read_text(encoding="utf-8"))

    if args.query is not None:
        queries = [(args.query_id, args.query)]
    else:
        inputs["queries"] = _require(cfg, "queries")
        queries = [(q.query_id, q.text) for q in load_queries(inputs["queries"])]

    embedder = get_embedder(cfg.embed_url)
    run, explanations = {}, []
    for qid, text in queries:
        result = rank_documents(beam_search(text, g, policy, cfg.beam, cfg.weights, embedder))
        if args.top_k:
            result = RetrievalResult(result.ranked[: args.top_k])
        run[qid] = [(r.doc_id, r.score) for r in result.ranked]
        explanations.append({"query_id": qid, "query": text, **result_to_dict(result)})
    _write(out, format_run(run, tag=f"lexgraph-seed{cfg.seed}").encode("utf-8"))
    _write(_sidecar(out, ".paths.jsonl"), _jsonl(explanations))
    _write_meta(out, "retrieve", cfg, inputs)


def _safe_name(subject_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", subject_id) or "subject"


def cmd_judge(args, cfg: PipelineConfig) -> None:
    out = _out(args)
    external = ExternalJudge(cfg.judge_url) if cfg.judge_url else None
    records = []
    if args.kind == "classification":
        corpus_path, rules_path, cls_path = _require(cfg, "corpus"), _require(cfg, "rules"), _require(cfg, "classifications")
        inputs = {"corpus": corpus_path, "rules": rules_path, "classifications": cls_path}
        corpus, rules = load_corpus(corpus_path), load_rules(rules_path)
        by_doc: dict[str, list[Classification]] = {}
        for c in _load_classifications(cls_path):
            if c.doc_id not in corpus:
                raise ValueError(f"classification references unknown document {c.doc_id!r}")
            by_doc.setdefault(c.doc_id, []).append(c)
        for doc in corpus:
            cls = by_doc.get(doc.doc_id, [])
            if external:
                records.append(external.judge(
                    doc.doc_id,
                    {"doc_id": doc.doc_id, "language": doc.language, "title": doc.title},
                    {"classifications": [c.to_dict() for c in cls]},
                ))
            else:
                records.append(judge_classification(doc, cls, rules, cfg.judge))
    else:
        graph_path, paths_path = _require(cfg, "graph"), _require(cfg, "paths")
        inputs = {"graph": graph_path, "paths": paths_path}
        g = load_graph(graph_path.read_bytes())
        for line in paths_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            result = result_from_dict(entry)
            if external:
                records.append(external.judge(entry["query_id"], {"query": entry["query"]}, result_to_dict(result)))
            else:
                records.append(judge_retrieval(entry["query"], result, g, cfg.judge, subject_id=entry["query_id"]))

    judgments = []
    for record in records:
        data = record.to_dict()
        data.pop("timestamp")
        judgments.append(data)
    _write(out, _dump({"seed": cfg.seed, "kind": args.kind, "judgments": judgments}))
    trail_dir = _sidecar(out, ".trails")
    for record in records:
        _write(trail_dir / f"{_safe_name(record.subject_id)}.jsonl", export_trail(record))
    _write_meta(out, "judge", cfg, inputs, {"timestamps": {r.subject_id: r.timestamp for r in records}})
    counts = {v: sum(r.verdict.value == v for r in records) for v in ("accept", "revise", "reject")}
    logger.info("judged %d subjects: %s", len(records), counts)


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    run_path, qrels_path = _require(cfg, "run"), _require(cfg, "qrels")
    out = _out(args)
    ks = [int(k) for k in args.k.split(",")] if args.k else list(DEFAULT_KS)
    report = evaluate_run(load_run(run_path), load_qrels(qrels_path), ks)
    _write(out, report_json(report, {"seed": cfg.seed}).encode("utf-8"))
    _write_meta(out, "evaluate", cfg, {"run": run_path, "qrels": qrels_path})
    logger.info("MAP %.4f MRR %.4f", report.map_score, report.mrr)


# --- argument parsing -----------------------------------------------------------

def _common(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--out", default=default, help="primary output path")
    p.add_argument("--embed-url", default=default, help="external embedder endpoint")
    p.add_argument("--judge-url", default=default, help="external judge endpoint")
    p.add_argument("-v", "--verbose", action="store_true", default=default)
    return p


def _beam_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beam-width", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--entry-k", type=int)
    p.add_argument("--w-sim", type=float)
    p.add_argument("--w-conf", type=float)
    p.add_argument("--w-div", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexgraph",
        parents=[_common(False)],
        description="Map legal documents to ATT&CK techniques and retrieve them over a knowledge graph.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    p = sub.add_parser("classify", parents=[common], help="label documents with techniques")
    p.add_argument("--corpus")
    p.add_argument("--rules")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("build-graph", parents=[common], help="build the knowledge graph")
    p.add_argument("--corpus")
    p.add_argument("--classifications")
    p.add_argument("--rules", help="optional; supplies technique names and keywords")
    p.add_argument("--graphml", help="also export GraphML to this path")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("export-graph", parents=[common], help="export a graph as GraphML")
    p.add_argument("--graph")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("train", parents=[common], help="train the path policy")
    p.add_argument("--graph")
    p.add_argument("--queries")
    p.add_argument("--qrels")
    p.add_argument("--policy", help="optional starting policy")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--relevance-bonus", type=float)
    p.add_argument("--baseline-decay", type=float)
    _beam_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrieve", parents=[common], help="rank documents for queries")
    p.add_argument("--graph")
    p.add_argument("--policy")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--query", help="single query text")
    group.add_argument("--queries", help="JSONL file of queries")
    p.add_argument("--query-id", default="query")
    p.add_argument("--top-k", type=int, default=0, help="truncate each ranking (0 keeps all)")
    _beam_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("judge", parents=[common], help="judge classifications or retrievals")
    p.add_argument("--kind", choices=("classification", "retrieval"), default="classification")
    p.add_argument("--corpus")
    p.add_argument("--rules")
    p.add_argument("--classifications")
    p.add_argument("--graph")
    p.add_argument("--paths", help="per-query path file written by 'retrieve'")
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("evaluate", parents=[common], help="score a run against qrels")
    p.add_argument("--run")
    p.add_argument("--qrels")
    p.add_argument("--k", help="comma-separated cutoffs (default 1,3,5,10)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    flags = {
        "seed": get("seed"),
        "embed_url": get("embed_url"),
        "judge_url": get("judge_url"),
        "beam": {"beam_width": get("beam_width"), "max_depth": get("max_depth"), "entry_k": get("entry_k")},
        "weights": {"w_sim": get("w_sim"), "w_conf": get("w_conf"), "w_div": get("w_div")},
        "train": {
            "learning_rate": get("learning_rate"),
            "episodes": get("episodes"),
            "relevance_bonus": get("relevance_bonus"),
            "baseline_decay": get("baseline_decay"),
        },
    }
    for key in ("corpus", "rules", "classifications", "graph", "policy", "queries", "qrels", "run", "paths"):
        flags[key] = get(key)
    return resolve_config(flags, get("config"))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        args.func(args, cfg)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, LookupError, ConfigError) as exc:
        print(f"lexgraph {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
