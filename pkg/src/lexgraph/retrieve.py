"""Policy-guided beam search over the knowledge graph.

A query is embedded, the most similar technique nodes become entry points,
and a beam of walks is grown depth by depth. Each step is scored by the
linear softmax policy (log-probability of the move) plus the reward of the
extended walk; the final document ranking uses the reward alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embed import Embedder, cosine, default_embedder
from .graph import Edge, EdgeKind, GraphError, KnowledgeGraph, strip_prefix

FEATURE_NAMES = (
    "query_similarity",
    "edge_confidence",
    "is_document",
    "relative_degree",
    "visited",
)
N_FEATURES = len(FEATURE_NAMES)


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    w_sim: float = 0.5
    w_conf: float = 0.3
    w_div: float = 0.2

    def __post_init__(self):
        parts = (self.w_sim, self.w_conf, self.w_div)
        if any(w < 0 or not math.isfinite(w) for w in parts):
            raise RetrievalError(f"reward weights must be finite and non-negative: {parts}")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise RetrievalError(f"reward weights must sum to 1, got {sum(parts)!r}")


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 5
    max_depth: int = 4
    entry_k: int = 3

    def __post_init__(self):
        # max_depth 0 is accepted as the degenerate "entry points only" search
        if self.beam_width < 1 or self.entry_k < 1 or self.max_depth < 0:
            raise RetrievalError(f"invalid beam configuration {self}")


@dataclass(frozen=True)
class PolicyParameters:
    theta: tuple[float, ...] = (0.0,) * N_FEATURES
    version: int = 0
    seed: int | None = None
    hyper: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.theta) != N_FEATURES:
            raise RetrievalError(f"theta must have {N_FEATURES} entries, got {len(self.theta)}")
        if not all(math.isfinite(t) for t in self.theta):
            raise RetrievalError("theta has non-finite entries")

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=np.float64)

    def to_json(self) -> str:
        data = {
            "version": self.version,
            "theta": list(self.theta),
            "feature_names": list(FEATURE_NAMES),
            "seed": self.seed,
            "hyper": self.hyper,
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> PolicyParameters:
        try:
            data = json.loads(text)
            names = tuple(data["feature_names"])
            theta = tuple(float(t) for t in data["theta"])
            version = int(data["version"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise RetrievalError(f"malformed policy file: {exc}") from None
        if names != FEATURE_NAMES:
            raise RetrievalError(f"policy feature names {names} do not match {FEATURE_NAMES}")
        return cls(theta, version, data.get("seed"), data.get("hyper") or {})


@dataclass(frozen=True)
class PathCandidate:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    reward: float
    log_policy: float = 0.0

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind.value, "confidence": e.confidence} for e in self.edges],
            "reward": self.reward,
            "log_policy": self.log_policy,
        }


@dataclass(frozen=True)
class RankedDocument:
    doc_id: str
    score: float
    best_path: PathCandidate


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[RankedDocument, ...]

    def doc_ids(self) -> list[str]:
        return [r.doc_id for r in self.ranked]


class _Similarity:
    """Memoized query-to-node cosine for one query."""

    def __init__(self, query: str, g: KnowledgeGraph, embedder: Embedder):
        self.g = g
        self.embedder = embedder
        self.qvec = embedder.embed(query)
        self._cache: dict[str, float] = {}

    def __call__(self, node_id: str) -> float:
        sim = self._cache.get(node_id)
        if sim is None:
            sim = cosine(self.qvec, self.embedder.embed(self.g.node(node_id).text))
            self._cache[node_id] = sim
        return sim


def entry_points(query: str, g: KnowledgeGraph, k: int, embedder: Embedder | None = None) -> list[str]:
    """Top-``k`` technique nodes by query similarity, ties by node id."""
    if k < 1:
        raise RetrievalError("k must be positive")
    techs = g.technique_nodes()
    if not techs:
        raise RetrievalError("graph has no technique nodes to start from")
    sim = _Similarity(query, g, embedder or default_embedder())
    return sorted(techs, key=lambda nid: (-sim(nid), nid))[:k]


def diversity(unique_techniques: int) -> float:
    if unique_techniques <= 1:
        return 0.0
    return min(1.0, (unique_techniques - 1) / 3)


def _path_edges(g: KnowledgeGraph, nodes: Sequence[str]) -> list[Edge]:
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        edge = g.edge_between(a, b)
        if edge is None:
            raise RetrievalError(f"invalid path: {a} and {b} are not adjacent")
        edges.append(edge)
    return edges


def _reward(g: KnowledgeGraph, nodes: Sequence[str], edges: Sequence[Edge], sim, weights: RewardWeights) -> float:
    mean_sim = sum(sim(n) for n in nodes) / len(nodes)
    mean_conf = sum(e.confidence for e in edges) / len(edges) if edges else 0.0
    unique_techs = len({n for n in nodes if not g.node(n).is_document})
    return weights.w_sim * mean_sim + weights.w_conf * mean_conf + weights.w_div * diversity(unique_techs)


def path_reward(
    path: PathCandidate | Sequence[str],
    query: str,
    g: KnowledgeGraph,
    weights: RewardWeights = RewardWeights(),
    embedder: Embedder | None = None,
) -> float:
    """Weighted sum of mean query similarity, mean edge confidence and tag diversity."""
    nodes = list(path.nodes if isinstance(path, PathCandidate) else path)
    if not nodes:
        raise RetrievalError("path has no nodes")
    for n in nodes:
        if n not in g.nodes:
            raise RetrievalError(f"invalid path: unknown node {n!r}")
    edges = _path_edges(g, nodes)
    return _reward(g, nodes, edges, _Similarity(query, g, embedder or default_embedder()), weights)


def _features(g: KnowledgeGraph, sim, candidate: str, edge: Edge, visited) -> list[float]:
    max_deg = g.max_degree
    return [
        sim(candidate),
        edge.confidence,
        1.0 if g.node(candidate).is_document else 0.0,
        g.degree(candidate) / max_deg if max_deg else 0.0,
        1.0 if candidate in visited else 0.0,
    ]


def policy_features(
    query: str,
    current_node: str,
    candidate_node: str,
    edge: Edge,
    visited,
    g: KnowledgeGraph,
    embedder: Embedder | None = None,
) -> np.ndarray:
    if {edge.src, edge.dst} != {current_node, candidate_node}:
        raise RetrievalError(f"edge {edge.src}-{edge.dst} does not join {current_node} and {candidate_node}")
    sim = _Similarity(query, g, embedder or default_embedder())
    return np.asarray(_features(g, sim, candidate_node, edge, visited), dtype=np.float64)


def policy_log_distribution(theta, features) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise RetrievalError("policy needs at least one candidate action")
    logits = feats @ np.asarray(theta, dtype=np.float64)
    shifted = logits - logits.max()
    return shifted - math.log(float(np.exp(shifted).sum()))


def policy_distribution(theta, features) -> np.ndarray:
    """Softmax over ``theta . phi`` for each candidate action."""
    return np.exp(policy_log_distribution(theta, features))


def candidate_actions(g: KnowledgeGraph, nodes: Sequence[str]) -> list[tuple[str, Edge]]:
    """Neighbors of the walk's last node, minus the node it just came from."""
    previous = nodes[-2] if len(nodes) > 1 else None
    return [(nb, e) for nb, e in g.adjacency[nodes[-1]] if nb != previous]


def beam_search(
    query: str,
    g: KnowledgeGraph,
    theta=None,
    config: BeamConfig = BeamConfig(),
    weights: RewardWeights = RewardWeights(),
    embedder: Embedder | None = None,
) -> list[PathCandidate]:
    """Grow walks from the entry points and return every completed walk.

    A walk completes when it reaches ``config.max_depth`` edges or has no
    non-backtracking move left. At each depth all extensions compete for
    ``beam_width`` global slots on ``log_policy + reward``. Output is sorted by
    reward descending, then node sequence.
    """
    embedder = embedder or default_embedder()
    if theta is None:
        theta = PolicyParameters()
    theta_vec = theta.vector if isinstance(theta, PolicyParameters) else np.asarray(theta, dtype=np.float64)
    sim = _Similarity(query, g, embedder)

    def make(nodes, edges, log_policy):
        return PathCandidate(tuple(nodes), tuple(edges), _reward(g, nodes, edges, sim, weights), log_policy)

    beam = [make((s,), (), 0.0) for s in entry_points(query, g, config.entry_k, embedder)]
    completed: list[PathCandidate] = []
    for _ in range(config.max_depth):
        extensions: list[tuple[float, PathCandidate]] = []
        for path in beam:
            actions = candidate_actions(g, path.nodes)
            if not actions:
                completed.append(path)
                continue
            visited = set(path.nodes)
            feats = [_features(g, sim, nb, e, visited) for nb, e in actions]
            logp = policy_log_distribution(theta_vec, feats)
            for (nb, edge), lp in zip(actions, logp):
                ext = make(path.nodes + (nb,), path.edges + (edge,), path.log_policy + float(lp))
                extensions.append((ext.log_policy + ext.reward, ext))
        extensions.sort(key=lambda item: (-item[0], item[1].nodes))
        beam = [ext for _, ext in extensions[: config.beam_width]]
        if not beam:
            break
    completed.extend(beam)
    completed.sort(key=lambda p: (-p.reward, p.nodes))
    return completed


def rank_documents(paths: Iterable[PathCandidate]) -> RetrievalResult:
    """Score each document by the best reward among walks that visit it."""
    best: dict[str, PathCandidate] = {}
    for path in paths:
        for node_id in dict.fromkeys(path.nodes):
            if not node_id.startswith("doc:"):
                continue
            current = best.get(node_id)
            if current is None or (-path.reward, path.nodes) < (-current.reward, current.nodes):
                best[node_id] = path
    ranked = sorted(
        (RankedDocument(strip_prefix(nid), p.reward, p) for nid, p in best.items()),
        key=lambda r: (-r.score, r.doc_id),
    )
    return RetrievalResult(tuple(ranked))


def retrieve(
    query: str,
    g: KnowledgeGraph,
    theta=None,
    config: BeamConfig = BeamConfig(),
    weights: RewardWeights = RewardWeights(),
    embedder: Embedder | None = None,
) -> RetrievalResult:
    return rank_documents(beam_search(query, g, theta, config, weights, embedder))


def validate_path(g: KnowledgeGraph, path: PathCandidate) -> None:
    """Raise if ``path`` is not a walk in ``g`` or its edges disagree with the graph."""
    if not path.nodes:
        raise RetrievalError("path has no nodes")
    for n in path.nodes:
        if n not in g.nodes:
            raise GraphError(f"path references unknown node {n!r}")
    if len(path.edges) != len(path.nodes) - 1:
        raise RetrievalError("path edge count does not match node count")
    for expected, edge in zip(_path_edges(g, path.nodes), path.edges):
        if expected.key != edge.key:
            raise RetrievalError(f"path edge {edge.key} does not match graph edge {expected.key}")


def result_to_dict(result: RetrievalResult) -> dict:
    return {
        "ranked": [
            {"doc_id": r.doc_id, "score": r.score, "best_path": r.best_path.to_dict()}
            for r in result.ranked
        ]
    }


def result_from_dict(data: dict) -> RetrievalResult:
    try:
        ranked = []
        for entry in data["ranked"]:
            p = entry["best_path"]
            edges = tuple(
                Edge(e["src"], e["dst"], float(e["confidence"]), EdgeKind(e["kind"])) for e in p["edges"]
            )
            path = PathCandidate(tuple(p["nodes"]), edges, float(p["reward"]), float(p.get("log_policy", 0.0)))
            ranked.append(RankedDocument(entry["doc_id"], float(entry["score"]), path))
    except (KeyError, TypeError, ValueError) as exc:
        raise RetrievalError(f"malformed retrieval result: {exc!r}") from None
    return RetrievalResult(tuple(ranked))
