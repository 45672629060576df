"""Drive every CLI stage over the packaged fixture data."""

from __future__ import annotations

from pathlib import Path

from lexgraph.cli import main

PRIMARY_OUTPUTS = ("classifications.json", "graph.json", "policy.json", "run.txt", "metrics.json")


def run_pipeline(work: Path, data: Path, seed: int = 0, episodes: int | None = None) -> dict[str, int]:
    """Run classify → build-graph → train → retrieve → evaluate → judge; return exit codes."""
    work.mkdir(parents=True, exist_ok=True)
    common = ["--seed", str(seed)]
    train_extra = ["--episodes", str(episodes)] if episodes is not None else []
    steps = {
        "classify": ["classify", "--corpus", data / "corpus.jsonl", "--rules", data / "rules.json",
                     "--out", work / "classifications.json"],
        "build-graph": ["build-graph", "--corpus", data / "corpus.jsonl", "--rules", data / "rules.json",
                        "--classifications", work / "classifications.json", "--out", work / "graph.json",
                        "--graphml", work / "graph.graphml"],
        "export-graph": ["export-graph", "--graph", work / "graph.json", "--out", work / "exported.graphml"],
        "train": ["train", "--graph", work / "graph.json", "--queries", data / "queries.jsonl",
                  "--qrels", data / "qrels.txt", "--out", work / "policy.json", *train_extra],
        "retrieve": ["retrieve", "--graph", work / "graph.json", "--policy", work / "policy.json",
                     "--queries", data / "queries.jsonl", "--out", work / "run.txt"],
        "evaluate": ["evaluate", "--run", work / "run.txt", "--qrels", data / "qrels.txt",
                     "--out", work / "metrics.json"],
        "judge-classification": ["judge", "--kind", "classification", "--corpus", data / "corpus.jsonl",
                                 "--rules", data / "rules.json", "--classifications", work / "classifications.json",
                                 "--out", work / "judgments.json"],
        "judge-retrieval": ["judge", "--kind", "retrieval", "--graph", work / "graph.json",
                            "--paths", work / "run.txt.paths.jsonl", "--out", work / "retrieval_judgments.json"],
    }
    codes = {}
    for name, argv in steps.items():
        codes[name] = main([*common, *map(str, argv)])
        if codes[name] != 0:
            break
    return codes
