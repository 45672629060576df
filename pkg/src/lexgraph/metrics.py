"""Ranking and multi-label classification metrics, TREC qrels/run I/O.

Conventions:

* P@k divides by k even when fewer than k documents were returned.
* Queries present in the qrels but missing from the run score 0.
* Relevance is binary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_KS = (1, 3, 5, 10)

Qrels = dict[str, dict[str, int]]
RunRanking = dict[str, list[tuple[str, float]]]


class MetricsError(ValueError):
    pass


def _check_k(k: int) -> None:
    if k < 1:
        raise MetricsError(f"cutoff k must be >= 1, got {k}")


def _hits(ranking: Sequence[str], relevant, k: int) -> int:
    return sum(1 for doc in ranking[:k] if doc in relevant)


def precision_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    _check_k(k)
    return _hits(ranking, relevant, k) / k


def recall_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    _check_k(k)
    if not relevant:
        return 0.0
    return _hits(ranking, relevant, k) / len(relevant)


def f1_at_k(ranking: Sequence[str], relevant, k: int) -> float:
    p = precision_at_k(ranking, relevant, k)
    r = recall_at_k(ranking, relevant, k)
    if p + r == 0.0:
        return 0.0
    return 2 * p * r / (p + r)


def average_precision(ranking: Sequence[str], relevant) -> float:
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc in enumerate(ranking, start=1):
        if doc in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def reciprocal_rank(ranking: Sequence[str], relevant) -> float:
    for rank, doc in enumerate(ranking, start=1):
        if doc in relevant:
            return 1.0 / rank
    return 0.0


def relevant_sets(qrels: Qrels) -> dict[str, set[str]]:
    return {qid: {doc for doc, rel in judged.items() if rel > 0} for qid, judged in qrels.items()}


def _doc_lists(run: Mapping[str, Sequence]) -> dict[str, list[str]]:
    out = {}
    for qid, entries in run.items():
        out[qid] = [e[0] if isinstance(e, tuple) else e for e in entries]
    return out


def map_over(run: Mapping[str, Sequence], qrels: Qrels) -> float:
    """Mean AP over every qrels query; queries absent from the run count as 0."""
    if not qrels:
        return 0.0
    docs = _doc_lists(run)
    rel = relevant_sets(qrels)
    return sum(average_precision(docs.get(q, []), rel[q]) for q in qrels) / len(qrels)


def mrr_over(run: Mapping[str, Sequence], qrels: Qrels) -> float:
    if not qrels:
        return 0.0
    docs = _doc_lists(run)
    rel = relevant_sets(qrels)
    return sum(reciprocal_rank(docs.get(q, []), rel[q]) for q in qrels) / len(qrels)


@dataclass
class MetricsReport:
    p_at: dict[int, float]
    recall_at: dict[int, float]
    f1_at: dict[int, float]
    map_score: float
    mrr: float
    per_query: dict[str, dict] = field(default_factory=dict)
    n_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "p_at": {str(k): v for k, v in self.p_at.items()},
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "f1_at": {str(k): v for k, v in self.f1_at.items()},
            "map": self.map_score,
            "mrr": self.mrr,
            "per_query": self.per_query,
        }

    def values(self) -> list[float]:
        vals = [*self.p_at.values(), *self.recall_at.values(), *self.f1_at.values(), self.map_score, self.mrr]
        for row in self.per_query.values():
            vals.extend(v for key, v in row.items() if isinstance(v, float))
        return vals


def evaluate_run(run: Mapping[str, Sequence], qrels: Qrels, ks: Iterable[int] = DEFAULT_KS) -> MetricsReport:
    ks = sorted(set(ks))
    for k in ks:
        _check_k(k)
    docs = _doc_lists(run)
    rel = relevant_sets(qrels)
    per_query: dict[str, dict] = {}
    for qid in sorted(qrels):
        ranking = docs.get(qid, [])
        row: dict = {"n_relevant": len(rel[qid]), "n_retrieved": len(ranking)}
        for k in ks:
            row[f"P@{k}"] = precision_at_k(ranking, rel[qid], k)
            row[f"R@{k}"] = recall_at_k(ranking, rel[qid], k)
            row[f"F1@{k}"] = f1_at_k(ranking, rel[qid], k)
        row["AP"] = average_precision(ranking, rel[qid])
        row["RR"] = reciprocal_rank(ranking, rel[qid])
        per_query[qid] = row

    n = len(per_query)

    def mean(key: str) -> float:
        return sum(row[key] for row in per_query.values()) / n if n else 0.0

    return MetricsReport(
        p_at={k: mean(f"P@{k}") for k in ks},
        recall_at={k: mean(f"R@{k}") for k in ks},
        f1_at={k: mean(f"F1@{k}") for k in ks},
        map_score=mean("AP"),
        mrr=mean("RR"),
        per_query=per_query,
        n_queries=n,
    )


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_label: dict[str, dict[str, float]] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_label": self.per_label,
        }


def classification_metrics(predicted: Sequence[Iterable[str]], gold: Sequence[Iterable[str]], labels: Iterable[str]) -> ClassificationMetrics:
    """Exact-set accuracy plus macro-averaged per-label precision, recall and F1."""
    labels = sorted(set(labels))
    if len(predicted) != len(gold):
        raise MetricsError(f"{len(predicted)} predictions for {len(gold)} gold samples")
    pred_sets = [set(p) for p in predicted]
    gold_sets = [set(g) for g in gold]
    allowed = set(labels)
    for sets in (pred_sets, gold_sets):
        for s in sets:
            if not s <= allowed:
                raise MetricsError(f"labels outside the declared label set: {sorted(s - allowed)}")
    if not pred_sets or not labels:
        return ClassificationMetrics(0.0, 0.0, 0.0, 0.0)

    accuracy = sum(p == g for p, g in zip(pred_sets, gold_sets)) / len(pred_sets)
    per_label = {}
    for label in labels:
        tp = sum(label in p and label in g for p, g in zip(pred_sets, gold_sets))
        fp = sum(label in p and label not in g for p, g in zip(pred_sets, gold_sets))
        fn = sum(label not in p and label in g for p, g in zip(pred_sets, gold_sets))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[label] = {"precision": precision, "recall": recall, "f1": f1, "tp": tp, "fp": fp, "fn": fn}
    n = len(labels)
    return ClassificationMetrics(
        accuracy,
        sum(v["precision"] for v in per_label.values()) / n,
        sum(v["recall"] for v in per_label.values()) / n,
        sum(v["f1"] for v in per_label.values()) / n,
        per_label,
    )


# --- TREC file formats -------------------------------------------------------

def parse_qrels(text: str) -> Qrels:
    qrels: Qrels = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise MetricsError(f"qrels line {lineno}: expected 'query_id 0 doc_id relevance'")
        qid, _, doc, rel = parts
        try:
            rel_value = int(rel)
        except ValueError:
            raise MetricsError(f"qrels line {lineno}: relevance {rel!r} is not an integer") from None
        if rel_value not in (0, 1):
            raise MetricsError(f"qrels line {lineno}: relevance must be 0 or 1, got {rel_value}")
        judged = qrels.setdefault(qid, {})
        if doc in judged:
            raise MetricsError(f"qrels line {lineno}: duplicate judgment for ({qid}, {doc})")
        judged[doc] = rel_value
    return qrels


def load_qrels(path: str | Path) -> Qrels:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"qrels file not found: {path}")
    return parse_qrels(path.read_text(encoding="utf-8"))


def format_qrels(qrels: Qrels) -> str:
    return "".join(
        f"{qid} 0 {doc} {rel}\n" for qid in sorted(qrels) for doc, rel in sorted(qrels[qid].items())
    )


def parse_run(text: str) -> RunRanking:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise MetricsError(f"run line {lineno}: expected 'query_id Q0 doc_id rank score tag'")
        qid, _, doc, rank, score, _tag = parts
        try:
            rows.setdefault(qid, []).append((int(rank), doc, float(score)))
        except ValueError:
            raise MetricsError(f"run line {lineno}: bad rank or score") from None
    run: RunRanking = {}
    for qid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        ranking = [(doc, score) for _, doc, score in entries]
        validate_ranking(qid, ranking)
        run[qid] = ranking
    return run


def validate_ranking(qid: str, ranking: Sequence[tuple[str, float]]) -> None:
    seen = set()
    for i, (doc, score) in enumerate(ranking):
        if doc in seen:
            raise MetricsError(f"run for {qid}: duplicate document {doc}")
        seen.add(doc)
        if i and score > ranking[i - 1][1]:
            raise MetricsError(f"run for {qid}: scores increase at rank {i + 1}")


def load_run(path: str | Path) -> RunRanking:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run file not found: {path}")
    return parse_run(path.read_text(encoding="utf-8"))


def format_run(run: Mapping[str, Sequence[tuple[str, float]]], tag: str = "lexgraph") -> str:
    lines = []
    for qid in run:
        validate_ranking(qid, run[qid])
        for rank, (doc, score) in enumerate(run[qid], start=1):
            lines.append(f"{qid} Q0 {doc} {rank} {score!r} {tag}\n")
    return "".join(lines)


def report_json(report: MetricsReport, extra: dict | None = None) -> str:
    data = report.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
