"""REINFORCE training of the linear path policy.

Each episode samples a training query, starts at its best entry point and
rolls out a walk of at most ``max_depth`` moves by sampling the softmax
policy. The return is the walk's reward plus a bonus when the walk ends on a
document judged relevant to the query. Parameters move along
``(G - b) * grad log pi(walk)``, with ``b`` an exponential moving average of
past returns (starting at 0).
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .embed import Embedder, default_embedder
from .graph import KnowledgeGraph, doc_node_id, strip_prefix
from .retrieve import (
    BeamConfig,
    PathCandidate,
    PolicyParameters,
    RetrievalError,
    RewardWeights,
    _features,
    _reward,
    _Similarity,
    candidate_actions,
    entry_points,
    policy_distribution,
)


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.05
    episodes: int = 500
    seed: int = 0
    relevance_bonus: float = 0.5
    baseline_decay: float = 0.9


@dataclass(frozen=True)
class TrainingQuery:
    query_id: str
    text: str


ReturnFn = Callable[[PathCandidate, TrainingQuery], float]
EpisodeHook = Callable[[int, np.ndarray, np.ndarray, float], None]


def sample_index(probs: Sequence[float], rng: random.Random) -> int:
    """Inverse-CDF draw from a discrete distribution."""
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def train_policy(
    g: KnowledgeGraph,
    queries: Sequence[TrainingQuery],
    qrels: Mapping[str, set[str] | frozenset[str]],
    config: BeamConfig = BeamConfig(),
    weights: RewardWeights = RewardWeights(),
    embedder: Embedder | None = None,
    hyper: TrainHyper = TrainHyper(),
    initial: PolicyParameters | None = None,
    return_fn: ReturnFn | None = None,
    on_episode: EpisodeHook | None = None,
) -> PolicyParameters:
    """Train theta with REINFORCE; deterministic for a fixed ``hyper.seed``.

    ``return_fn`` replaces the default return (reward plus relevance bonus),
    which is how controlled bandit-style checks are run. ``on_episode`` gets
    ``(episode, theta_after, delta, G)`` after every update.
    """
    if not queries:
        raise RetrievalError("training needs at least one query")
    for qid, docs in qrels.items():
        for doc_id in docs:
            if doc_node_id(doc_id) not in g.nodes:
                raise RetrievalError(f"qrels for {qid!r} reference {doc_id!r}, which is not in the graph")

    embedder = embedder or default_embedder()
    initial = initial or PolicyParameters()
    theta = initial.vector.copy()
    rng = random.Random(hyper.seed)
    baseline = 0.0

    sims = {q.query_id: _Similarity(q.text, g, embedder) for q in queries}
    starts = {q.query_id: entry_points(q.text, g, 1, embedder)[0] for q in queries}

    for episode in range(hyper.episodes):
        query = queries[rng.randrange(len(queries))]
        sim = sims[query.query_id]
        nodes = [starts[query.query_id]]
        edges = []
        grad = np.zeros_like(theta)
        log_policy = 0.0
        for _ in range(config.max_depth):
            actions = candidate_actions(g, nodes)
            if not actions:
                break
            visited = set(nodes)
            feats = np.asarray([_features(g, sim, nb, e, visited) for nb, e in actions])
            probs = policy_distribution(theta, feats)
            choice = sample_index(probs, rng)
            grad += feats[choice] - probs @ feats
            log_policy += float(np.log(probs[choice]))
            nb, edge = actions[choice]
            nodes.append(nb)
            edges.append(edge)

        path = PathCandidate(tuple(nodes), tuple(edges), _reward(g, nodes, edges, sim, weights), log_policy)
        if return_fn is not None:
            ret = float(return_fn(path, query))
        else:
            relevant = qrels.get(query.query_id, ())
            hit = g.node(nodes[-1]).is_document and strip_prefix(nodes[-1]) in relevant
            ret = path.reward + hyper.relevance_bonus * (1.0 if hit else 0.0)

        delta = hyper.learning_rate * (ret - baseline) * grad
        theta = theta + delta
        baseline = hyper.baseline_decay * baseline + (1.0 - hyper.baseline_decay) * ret
        if on_episode is not None:
            on_episode(episode, theta, delta, ret)

    return PolicyParameters(
        tuple(float(t) for t in theta),
        initial.version + 1,
        hyper.seed,
        {**asdict(hyper), **asdict(config), **asdict(weights)},
    )


def load_queries(path) -> list[TrainingQuery]:
    """Read ``{"query_id": ..., "text": ...}`` records, one per line."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"queries file not found: {path}")
    queries = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            query = TrainingQuery(str(record["query_id"]), str(record["text"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise RetrievalError(f"{path}:{lineno}: malformed query record ({exc})") from None
        if query.query_id in seen:
            raise RetrievalError(f"{path}:{lineno}: duplicate query id {query.query_id!r}")
        seen.add(query.query_id)
        queries.append(query)
    return queries
