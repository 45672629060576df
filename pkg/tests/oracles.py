"""Independent reference implementations used by the tests.

Everything here is written naively and separately from the package code so
that agreement between the two is meaningful.
"""

from __future__ import annotations

import math
import random

import numpy as np

from lexgraph.graph import Edge, EdgeKind, KnowledgeGraph, Node, NodeKind
from lexgraph.metrics import evaluate_run, map_over, mrr_over
from lexgraph.retrieve import policy_distribution


class TableEmbedder:
    """Embedder returning prescribed vectors; unknown text maps to the zero vector."""

    def __init__(self, table: dict[str, list[float]], dimension: int = 3):
        self.dimension = dimension
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    def embed(self, text: str) -> np.ndarray:
        vec = self.table.get(text)
        if vec is None:
            return np.zeros(self.dimension)
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec


def cos_vector(c: float) -> list[float]:
    """A 2-d unit vector whose cosine with [1, 0] is ``c``."""
    return [c, math.sqrt(max(0.0, 1.0 - c * c))]


def tech(tid: str, text: str | None = None) -> Node:
    return Node(f"tech:{tid}", NodeKind.TECHNIQUE, tid, text or tid)


def doc(did: str, text: str | None = None) -> Node:
    return Node(f"doc:{did}", NodeKind.DOCUMENT, did, text or did)


def edge(a: Node, b: Node, conf: float) -> Edge:
    both_tech = a.kind is NodeKind.TECHNIQUE and b.kind is NodeKind.TECHNIQUE
    return Edge(a.node_id, b.node_id, conf, EdgeKind.CO_OCCURS if both_tech else EdgeKind.CLASSIFIED_AS)


# --- random graphs -----------------------------------------------------------

def random_graph(rng: random.Random, n_nodes: int, extra_edges: int = 0, dim: int = 4):
    """Random connected graph respecting the doc/technique schema.

    Returns ``(graph, embedder, query_text)``. With ``extra_edges == 0`` the
    graph is a tree.
    """
    nodes = [tech("T0000", "t0")]
    edges = {}
    for i in range(1, n_nodes):
        is_doc = rng.random() < 0.5
        new = doc(f"D{i:02d}", f"d{i}") if is_doc else tech(f"T{i:04d}", f"t{i}")
        options = [n for n in nodes if n.kind is NodeKind.TECHNIQUE] if is_doc else nodes
        parent = rng.choice(options)
        edges[frozenset((parent.node_id, new.node_id))] = edge(parent, new, round(rng.uniform(0.05, 1.0), 3))
        nodes.append(new)
    attempts = 0
    added = 0
    while added < extra_edges and attempts < 200:
        attempts += 1
        a, b = rng.sample(nodes, 2)
        if a.kind is NodeKind.DOCUMENT and b.kind is NodeKind.DOCUMENT:
            continue
        key = frozenset((a.node_id, b.node_id))
        if key in edges:
            continue
        edges[key] = edge(a, b, round(rng.uniform(0.05, 1.0), 3))
        added += 1
    table = {n.text: [rng.gauss(0, 1) for _ in range(dim)] for n in nodes}
    table["query"] = [rng.gauss(0, 1) for _ in range(dim)]
    g = KnowledgeGraph.from_parts(nodes, list(edges.values()))
    return g, TableEmbedder(table, dim), "query"


# --- brute-force retrieval ---------------------------------------------------

def _cos(u, v) -> float:
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def naive_adjacency(g: KnowledgeGraph) -> dict[str, dict[str, float]]:
    adj = {nid: {} for nid in g.nodes}
    for e in g.edges:
        adj[e.src][e.dst] = e.confidence
        adj[e.dst][e.src] = e.confidence
    return adj


def naive_reward(g, adj, nodes, query_vec, embedder, w=(0.5, 0.3, 0.2)) -> float:
    sims = [_cos(query_vec, embedder.embed(g.nodes[n].text)) for n in nodes]
    confs = [adj[a][b] for a, b in zip(nodes, nodes[1:])]
    techs = {n for n in nodes if n.startswith("tech:")}
    u = len(techs)
    div = 0.0 if u <= 1 else min(1.0, (u - 1) / 3)
    mean_conf = sum(confs) / len(confs) if confs else 0.0
    return w[0] * sum(sims) / len(sims) + w[1] * mean_conf + w[2] * div


def naive_entry_points(g, query_vec, embedder, k):
    scored = []
    for nid, node in g.nodes.items():
        if nid.startswith("tech:"):
            scored.append((-_cos(query_vec, embedder.embed(node.text)), nid))
    scored.sort()
    return [nid for _, nid in scored[:k]]


def enumerate_walks(g, starts, max_depth):
    """All maximal non-backtracking walks: length ``max_depth`` or stuck earlier."""
    adj = naive_adjacency(g)
    out = []

    def grow(walk):
        if len(walk) - 1 == max_depth:
            out.append(tuple(walk))
            return
        prev = walk[-2] if len(walk) > 1 else None
        nexts = sorted(nb for nb in adj[walk[-1]] if nb != prev)
        if not nexts:
            out.append(tuple(walk))
            return
        for nb in nexts:
            grow(walk + [nb])

    for s in starts:
        grow([s])
    return out


def count_walk_prefixes(g, starts, max_depth) -> int:
    """Upper bound on beam occupancy: number of non-backtracking walks of any depth."""
    adj = naive_adjacency(g)
    total = 0
    frontier = [(s,) for s in starts]
    for _ in range(max_depth):
        nxt = []
        for w in frontier:
            prev = w[-2] if len(w) > 1 else None
            nxt.extend(w + (nb,) for nb in adj[w[-1]] if nb != prev)
        total = max(total, len(nxt))
        frontier = nxt
    return max(total, len(starts))


def naive_doc_rewards(g, walks, query_vec, embedder):
    """doc_id -> list of (reward, walk) over every walk visiting the document."""
    adj = naive_adjacency(g)
    out = {}
    for walk in walks:
        r = naive_reward(g, adj, walk, query_vec, embedder)
        for n in set(walk):
            if n.startswith("doc:"):
                out.setdefault(n[4:], []).append((r, walk))
    return out


def assert_ranking_matches(result, doc_rewards, tol=1e-12):
    """Check a RetrievalResult against brute-force rewards.

    Rewards agree to ``tol`` (the oracle sums in a different floating-point
    order), so a best walk may be any walk within ``tol`` of the maximum.
    Where the result's own scores tie exactly, doc ids must ascend.
    """
    assert sorted(r.doc_id for r in result.ranked) == sorted(doc_rewards)
    best = {}
    for did, rows in doc_rewards.items():
        top = max(r for r, _ in rows)
        near = sorted(w for r, w in rows if r >= top - tol)
        best[did] = (top, near)
    for r in result.ranked:
        top, near = best[r.doc_id]
        assert abs(r.score - top) <= tol, (r.doc_id, r.score, top)
        assert r.best_path.nodes in near, (r.doc_id, r.best_path.nodes, near)
    for a, b in zip(result.ranked, result.ranked[1:]):
        assert best[a.doc_id][0] >= best[b.doc_id][0] - tol
        assert a.score > b.score or (a.score == b.score and a.doc_id < b.doc_id)


# --- brute-force metrics -----------------------------------------------------

def ref_precision(ranking, relevant, k):
    got = 0
    for i in range(k):
        if i < len(ranking) and ranking[i] in relevant:
            got += 1
    return got / k


def ref_recall(ranking, relevant, k):
    if len(relevant) == 0:
        return 0.0
    got = 0
    for i in range(min(k, len(ranking))):
        if ranking[i] in relevant:
            got += 1
    return got / len(relevant)


def ref_f1(ranking, relevant, k):
    p = ref_precision(ranking, relevant, k)
    r = ref_recall(ranking, relevant, k)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def ref_ap(ranking, relevant):
    # mean of precision at each relevant document's rank
    if len(relevant) == 0:
        return 0.0
    precisions = []
    for i in range(len(ranking)):
        if ranking[i] in relevant:
            precisions.append(ref_precision(ranking, relevant, i + 1))
    return sum(precisions) / len(relevant)


def ref_rr(ranking, relevant):
    for i in range(len(ranking)):
        if ranking[i] in relevant:
            return 1 / (i + 1)
    return 0.0


def random_instance(rng: random.Random, max_queries=10, max_docs=20):
    """Random (qrels, run) pair; some queries may be missing from the run."""
    docs = [f"d{i}" for i in range(rng.randint(1, max_docs))]
    qrels, run = {}, {}
    for q in range(rng.randint(1, max_queries)):
        qid = f"q{q}"
        judged = rng.sample(docs, rng.randint(1, len(docs)))
        qrels[qid] = {d: rng.randint(0, 1) for d in judged}
        if rng.random() < 0.9:
            ranked = rng.sample(docs, rng.randint(0, len(docs)))
            scores = sorted((rng.random() for _ in ranked), reverse=True)
            run[qid] = list(zip(ranked, scores))
    return qrels, run


def check_against_reference(qrels, run, ks=(1, 3, 5, 10)):
    """Assert every metric in ``evaluate_run`` matches the references within 1e-9."""
    report = evaluate_run(run, qrels, ks)
    rankings = {q: [d for d, _ in run.get(q, [])] for q in qrels}
    rel = {q: {d for d, r in j.items() if r == 1} for q, j in qrels.items()}
    n = len(qrels)
    for k in ks:
        assert abs(report.p_at[k] - sum(ref_precision(rankings[q], rel[q], k) for q in qrels) / n) <= 1e-9
        assert abs(report.recall_at[k] - sum(ref_recall(rankings[q], rel[q], k) for q in qrels) / n) <= 1e-9
        assert abs(report.f1_at[k] - sum(ref_f1(rankings[q], rel[q], k) for q in qrels) / n) <= 1e-9
    ref_map = sum(ref_ap(rankings[q], rel[q]) for q in qrels) / n
    ref_mrr = sum(ref_rr(rankings[q], rel[q]) for q in qrels) / n
    assert abs(report.map_score - ref_map) <= 1e-9
    assert abs(report.mrr - ref_mrr) <= 1e-9
    assert abs(map_over(run, qrels) - ref_map) <= 1e-9
    assert abs(mrr_over(run, qrels) - ref_mrr) <= 1e-9
    for q in qrels:
        assert abs(report.per_query[q]["AP"] - ref_ap(rankings[q], rel[q])) <= 1e-9
    assert all(0.0 <= v <= 1.0 for v in report.values())


# --- two-armed REINFORCE -----------------------------------------------------

# Two-arm instance: hub technique linked to documents A and B.
COS = {"hub": 0.9, "a": 0.5, "b": -0.3}
PHI = {"doc:A": [0.5, 1.0, 1.0, 0.5, 0.0], "doc:B": [-0.3, 0.1, 1.0, 0.5, 0.0]}


def two_arm():
    hub, a, b = tech("T0001", "hub"), doc("A", "a"), doc("B", "b")
    g = KnowledgeGraph.from_parts([hub, a, b], [edge(a, hub, 1.0), edge(b, hub, 0.1)])
    table = {k: cos_vector(c) for k, c in COS.items()}
    table["q"] = [1.0, 0.0]
    return g, TableEmbedder(table, 2)


def arm_return(path, query):
    return 1.0 if path.nodes[-1] == "doc:A" else 0.0


def simulate_two_arm(seed, episodes=500, alpha=0.05, decay=0.9):
    """Direct REINFORCE on the bandit: same RNG protocol, hand-coded features."""
    rng = random.Random(seed)
    theta = [0.0] * 5
    b = 0.0
    arms = ["doc:A", "doc:B"]
    for _ in range(episodes):
        rng.randrange(1)  # query draw
        logits = [sum(t * f for t, f in zip(theta, PHI[a])) for a in arms]
        m = max(logits)
        ex = [math.exp(x - m) for x in logits]
        pa = ex[0] / (ex[0] + ex[1])
        pick = 0 if rng.random() < pa else 1
        G = 1.0 if pick == 0 else 0.0
        mean_phi = [pa * x + (1 - pa) * y for x, y in zip(PHI["doc:A"], PHI["doc:B"])]
        grad = [f - m_ for f, m_ in zip(PHI[arms[pick]], mean_phi)]
        theta = [t + alpha * (G - b) * gr for t, gr in zip(theta, grad)]
        b = decay * b + (1 - decay) * G
    return theta


def prob_a(theta):
    return policy_distribution(np.asarray(theta), [PHI["doc:A"], PHI["doc:B"]])[0]
