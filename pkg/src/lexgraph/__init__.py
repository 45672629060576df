"""Keyword-rule mapping of legal documents to MITRE ATT&CK techniques,
knowledge-graph retrieval with a policy-guided beam search, a BDI-style judge
and IR evaluation."""

__version__ = "0.1.0"

from .corpus import Corpus, Document, load_corpus, normalize_text, tokenize
from .embed import HashingEmbedder, cosine, embed_text
from .graph import KnowledgeGraph, build_graph, load_graph, neighbors, save_graph
from .judge import JudgmentRecord, export_trail, judge_classification, judge_retrieval
from .metrics import evaluate_run
from .retrieve import BeamConfig, PolicyParameters, RewardWeights, beam_search, rank_documents, retrieve
from .rules import Classification, TechniqueRuleSet, classify, explain, load_rules
from .train import TrainHyper, train_policy

__all__ = [
    "BeamConfig",
    "Classification",
    "Corpus",
    "Document",
    "HashingEmbedder",
    "JudgmentRecord",
    "KnowledgeGraph",
    "PolicyParameters",
    "RewardWeights",
    "TechniqueRuleSet",
    "TrainHyper",
    "beam_search",
    "build_graph",
    "classify",
    "cosine",
    "embed_text",
    "evaluate_run",
    "explain",
    "export_trail",
    "judge_classification",
    "judge_retrieval",
    "load_corpus",
    "load_graph",
    "load_rules",
    "neighbors",
    "normalize_text",
    "rank_documents",
    "retrieve",
    "save_graph",
    "tokenize",
    "train_policy",
]
