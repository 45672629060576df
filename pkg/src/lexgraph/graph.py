"""Knowledge graph of documents and ATT&CK techniques.

Two edge layers:

* ``classified_as`` links a document to each technique it was labelled with;
  confidence is the classifier score.
* ``co_occurs`` links two techniques whose document sets overlap; confidence
  is the Jaccard similarity of those sets.

Traversal is undirected.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from itertools import combinations
from typing import Iterable

from .corpus import Corpus
from .rules import Classification, TechniqueRuleSet

FORMAT_VERSION = 1
DOC_PREFIX = "doc:"
TECH_PREFIX = "tech:"


class GraphError(ValueError):
    pass


class NodeKind(str, Enum):
    DOCUMENT = "document"
    TECHNIQUE = "technique"


class EdgeKind(str, Enum):
    CLASSIFIED_AS = "classified_as"
    CO_OCCURS = "co_occurs"


def doc_node_id(doc_id: str) -> str:
    return DOC_PREFIX + doc_id


def tech_node_id(technique_id: str) -> str:
    return TECH_PREFIX + technique_id


def strip_prefix(node_id: str) -> str:
    return node_id.split(":", 1)[1]


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: NodeKind
    label: str
    text: str

    def __post_init__(self):
        prefix = DOC_PREFIX if self.kind is NodeKind.DOCUMENT else TECH_PREFIX
        if not self.node_id.startswith(prefix) or len(self.node_id) == len(prefix):
            raise GraphError(f"node id {self.node_id!r} does not match kind {self.kind.value}")

    @property
    def is_document(self) -> bool:
        return self.kind is NodeKind.DOCUMENT


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    confidence: float
    kind: EdgeKind

    def __post_init__(self):
        if self.src == self.dst:
            raise GraphError(f"self-loop on {self.src!r}")
        if not 0.0 < self.confidence <= 1.0:
            raise GraphError(f"edge {self.src}->{self.dst} confidence {self.confidence} outside (0, 1]")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.kind.value)

    def other(self, node_id: str) -> str:
        return self.dst if node_id == self.src else self.src


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    nodes: dict[str, Node]
    edges: tuple[Edge, ...]
    adjacency: dict[str, tuple[tuple[str, Edge], ...]] = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_parts(cls, nodes: Iterable[Node], edges: Iterable[Edge], meta: dict | None = None) -> KnowledgeGraph:
        node_map: dict[str, Node] = {}
        for node in nodes:
            if node.node_id in node_map:
                raise GraphError(f"duplicate node {node.node_id!r}")
            node_map[node.node_id] = node

        seen: set[tuple[str, str, str]] = set()
        pairs: set[frozenset[str]] = set()
        adj: dict[str, list[tuple[str, Edge]]] = {nid: [] for nid in node_map}
        edge_list = []
        for edge in edges:
            for end in (edge.src, edge.dst):
                if end not in node_map:
                    raise GraphError(f"edge endpoint {end!r} is not a node")
            src_doc = node_map[edge.src].is_document
            dst_doc = node_map[edge.dst].is_document
            if edge.kind is EdgeKind.CLASSIFIED_AS and src_doc == dst_doc:
                raise GraphError(f"classified_as edge {edge.src}-{edge.dst} must join a document and a technique")
            if edge.kind is EdgeKind.CO_OCCURS and (src_doc or dst_doc):
                raise GraphError(f"co_occurs edge {edge.src}-{edge.dst} must join two techniques")
            if edge.key in seen:
                raise GraphError(f"duplicate edge {edge.key}")
            pair = frozenset((edge.src, edge.dst))
            if pair in pairs:
                raise GraphError(f"more than one edge between {edge.src} and {edge.dst}")
            seen.add(edge.key)
            pairs.add(pair)
            edge_list.append(edge)
            adj[edge.src].append((edge.dst, edge))
            adj[edge.dst].append((edge.src, edge))

        edge_list.sort(key=lambda e: e.key)
        adjacency = {nid: tuple(sorted(items, key=lambda it: it[0])) for nid, items in adj.items()}
        return cls(dict(sorted(node_map.items())), tuple(edge_list), adjacency, dict(meta or {}))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and set(self.edges) == set(other.edges)

    def __hash__(self):
        return hash((tuple(self.nodes), self.edges))

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def degree(self, node_id: str) -> int:
        return len(self.adjacency[node_id])

    @cached_property
    def max_degree(self) -> int:
        return max((len(v) for v in self.adjacency.values()), default=0)

    def technique_nodes(self) -> list[str]:
        return [nid for nid, n in self.nodes.items() if not n.is_document]

    def document_nodes(self) -> list[str]:
        return [nid for nid, n in self.nodes.items() if n.is_document]

    def edge_between(self, a: str, b: str) -> Edge | None:
        for neighbor, edge in self.adjacency.get(a, ()):
            if neighbor == b:
                return edge
        return None


def neighbors(g: KnowledgeGraph, node_id: str) -> list[tuple[str, Edge]]:
    """Adjacent nodes of ``node_id`` sorted by neighbor id, both edge kinds."""
    if node_id not in g.adjacency:
        raise GraphError(f"unknown node {node_id!r}")
    return list(g.adjacency[node_id])


def technique_text(technique_id: str, rules: TechniqueRuleSet | None) -> tuple[str, str]:
    """Display label and embedding text (name plus keywords) of a technique."""
    if rules is None:
        return technique_id, technique_id
    name = rules.technique_name(technique_id)
    label = technique_id if name == technique_id else f"{technique_id} {name}"
    keywords = list(dict.fromkeys(rules.keywords_for(technique_id)))
    return label, " ".join([name, *keywords])


def build_graph(
    corpus: Corpus,
    classifications: Iterable[Classification],
    rules: TechniqueRuleSet | None = None,
    meta: dict | None = None,
) -> KnowledgeGraph:
    """Assemble the graph from a corpus and its classifications.

    Repeated (document, technique) pairs keep their highest score. ``rules``
    supplies technique names and keywords for node text; without it the
    technique id stands in.
    """
    best: dict[tuple[str, str], float] = {}
    for c in classifications:
        if c.doc_id not in corpus:
            raise GraphError(f"classification references unknown document {c.doc_id!r}")
        key = (c.doc_id, c.technique_id)
        best[key] = max(best.get(key, 0.0), c.score)

    nodes = [
        Node(doc_node_id(d.doc_id), NodeKind.DOCUMENT, d.title or d.doc_id, f"{d.title} {d.body}".strip())
        for d in corpus
    ]
    docs_of: dict[str, set[str]] = {}
    for doc_id, tid in best:
        docs_of.setdefault(tid, set()).add(doc_id)
    for tid in sorted(docs_of):
        label, text = technique_text(tid, rules)
        nodes.append(Node(tech_node_id(tid), NodeKind.TECHNIQUE, label, text))

    edges = [
        Edge(doc_node_id(doc_id), tech_node_id(tid), score, EdgeKind.CLASSIFIED_AS)
        for (doc_id, tid), score in sorted(best.items())
    ]
    for a, b in combinations(sorted(docs_of), 2):
        inter = len(docs_of[a] & docs_of[b])
        if inter:
            jaccard = inter / len(docs_of[a] | docs_of[b])
            edges.append(Edge(tech_node_id(a), tech_node_id(b), jaccard, EdgeKind.CO_OCCURS))
    return KnowledgeGraph.from_parts(nodes, edges, meta)


def graph_to_dict(g: KnowledgeGraph) -> dict:
    return {
        "format": "lexgraph-kg",
        "version": FORMAT_VERSION,
        "meta": g.meta,
        "nodes": [
            {"node_id": n.node_id, "kind": n.kind.value, "label": n.label, "text": n.text}
            for n in g.nodes.values()
        ],
        "edges": [
            # float repr round-trips exactly; the hex form is kept as a checksum
            {"src": e.src, "dst": e.dst, "kind": e.kind.value,
             "confidence": e.confidence, "confidence_hex": e.confidence.hex()}
            for e in g.edges
        ],
    }


def save_graph(g: KnowledgeGraph) -> bytes:
    return (json.dumps(graph_to_dict(g), ensure_ascii=False, indent=1, sort_keys=True) + "\n").encode("utf-8")


def load_graph(payload: bytes) -> KnowledgeGraph:
    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GraphError(f"corrupt graph payload: {exc}") from None
    if not isinstance(data, dict) or data.get("format") != "lexgraph-kg":
        raise GraphError("payload is not a serialized lexgraph knowledge graph")
    if data.get("version") != FORMAT_VERSION:
        raise GraphError(f"graph format version {data.get('version')!r} is not supported (expected {FORMAT_VERSION})")
    try:
        nodes = [Node(n["node_id"], NodeKind(n["kind"]), n["label"], n["text"]) for n in data["nodes"]]
        edges = []
        for e in data["edges"]:
            conf = float(e["confidence"])
            if "confidence_hex" in e and float.fromhex(e["confidence_hex"]) != conf:
                raise GraphError(f"confidence checksum mismatch on edge {e['src']}->{e['dst']}")
            edges.append(Edge(e["src"], e["dst"], conf, EdgeKind(e["kind"])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GraphError):
            raise
        raise GraphError(f"corrupt graph payload: {exc!r}") from None
    return KnowledgeGraph.from_parts(nodes, edges, data.get("meta") or {})


def export_graphml(g: KnowledgeGraph) -> bytes:
    """GraphML rendering for visualization tools. Not read back by this package."""
    ns = "http://graphml.graphdrawing.org/xmlns"
    ET.register_namespace("", ns)
    root = ET.Element(f"{{{ns}}}graphml")
    keys = [
        ("kind", "node", "string"), ("label", "node", "string"),
        ("edge_kind", "edge", "string"), ("confidence", "edge", "double"),
    ]
    for name, domain, typ in keys:
        ET.SubElement(root, f"{{{ns}}}key", {"id": name, "for": domain, "attr.name": name, "attr.type": typ})
    graph = ET.SubElement(root, f"{{{ns}}}graph", {"id": "lexgraph", "edgedefault": "undirected"})
    for n in g.nodes.values():
        el = ET.SubElement(graph, f"{{{ns}}}node", {"id": n.node_id})
        ET.SubElement(el, f"{{{ns}}}data", {"key": "kind"}).text = n.kind.value
        ET.SubElement(el, f"{{{ns}}}data", {"key": "label"}).text = n.label
    for i, e in enumerate(g.edges):
        el = ET.SubElement(graph, f"{{{ns}}}edge", {"id": f"e{i}", "source": e.src, "target": e.dst})
        ET.SubElement(el, f"{{{ns}}}data", {"key": "edge_kind"}).text = e.kind.value
        ET.SubElement(el, f"{{{ns}}}data", {"key": "confidence"}).text = repr(e.confidence)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"
