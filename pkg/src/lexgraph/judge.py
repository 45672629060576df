"""Rule-table judge with a belief/desire/intention decision trail.

Every judgment declares its goals (desires), plans and executes one check per
goal (intentions) and records what it observed (beliefs). Each executed
intention carries an outcome belief; the verdict is a function of how many
of those outcomes failed:

    0 failures -> accept, 1 -> revise, 2 or more -> reject

so any exported trail can be replayed to the same verdict.
"""

from __future__ import annotations

import json
import os
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Union

from .corpus import Document
from .graph import GraphError, KnowledgeGraph
from .retrieve import RetrievalError, RetrievalResult, validate_path
from .rules import Classification, TechniqueRuleSet, find_phrase

JUDGE_URL_ENV = "LEXGRAPH_JUDGE_URL"


class JudgeError(ValueError):
    pass


class Source(str, Enum):
    RULE_EVIDENCE = "rule_evidence"
    METRIC = "metric"
    EXTERNAL = "external"


class Status(str, Enum):
    PLANNED = "planned"
    EXECUTED = "executed"
    ABANDONED = "abandoned"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REVISE = "revise"
    REJECT = "reject"


@dataclass(frozen=True)
class Belief:
    proposition: str
    confidence: float
    source: Source
    goal_id: str | None = None
    # set only on the belief that closes a check
    outcome: bool | None = None
    # set only when an external judge supplied the verdict
    verdict: Verdict | None = None

    def __post_init__(self):
        if not self.proposition:
            raise JudgeError("belief proposition must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise JudgeError(f"belief confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": "belief",
            "proposition": self.proposition,
            "confidence": self.confidence,
            "source": self.source.value,
            "goal_id": self.goal_id,
            "outcome": self.outcome,
            "verdict": self.verdict.value if self.verdict else None,
        }


@dataclass(frozen=True)
class Desire:
    goal_id: str
    description: str
    priority: int

    def to_dict(self) -> dict:
        return {"kind": "desire", "goal_id": self.goal_id, "description": self.description, "priority": self.priority}


@dataclass(frozen=True)
class Intention:
    goal_id: str
    check_name: str
    status: Status
    result: Belief | None = None

    def to_dict(self) -> dict:
        return {
            "kind": "intention",
            "goal_id": self.goal_id,
            "check_name": self.check_name,
            "status": self.status.value,
            "result": self.result.to_dict() if self.result else None,
        }


TrailEvent = Union[Belief, Desire, Intention]


@dataclass(frozen=True)
class JudgmentRecord:
    subject_id: str
    verdict: Verdict
    rationale: str
    trail: tuple[TrailEvent, ...]
    timestamp: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "verdict": self.verdict.value,
            "rationale": self.rationale,
            "timestamp": self.timestamp,
            "trail": [event.to_dict() for event in self.trail],
        }


@dataclass(frozen=True)
class JudgeThresholds:
    score_floor: float = 0.3
    label_ceiling: int = 8
    reward_floor: float = 0.2


def verdict_for(failures: int) -> Verdict:
    if failures == 0:
        return Verdict.ACCEPT
    if failures == 1:
        return Verdict.REVISE
    return Verdict.REJECT


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Session:
    """Accumulates one judgment's trail."""

    def __init__(self, subject_id: str):
        self.subject_id = subject_id
        self.trail: list[TrailEvent] = []
        self.desires: dict[str, Desire] = {}
        self.failed: list[str] = []
        self.external: Verdict | None = None

    def desire(self, goal_id: str, description: str, priority: int) -> None:
        if goal_id in self.desires:
            raise JudgeError(f"duplicate goal {goal_id!r}")
        self.desires[goal_id] = Desire(goal_id, description, priority)
        self.trail.append(self.desires[goal_id])

    def check(
        self,
        goal_id: str,
        check_name: str,
        source: Source,
        run: Callable[[], tuple[bool, str, list[Belief]]],
    ) -> None:
        if goal_id not in self.desires:
            raise JudgeError(f"intention for undeclared goal {goal_id!r}")
        self.trail.append(Intention(goal_id, check_name, Status.PLANNED))
        passed, summary, observations = run()
        self.trail.extend(observations)
        outcome = Belief(summary, 1.0, source, goal_id, passed)
        self.trail.append(outcome)
        self.trail.append(Intention(goal_id, check_name, Status.EXECUTED, outcome))
        if not passed:
            self.failed.append(summary)

    def close(self, clock: Callable[[], str]) -> JudgmentRecord:
        verdict = self.external or verdict_for(len(self.failed))
        if self.external is not None:
            rationale = self.failed[0] if self.failed else verdict.value
        elif self.failed:
            rationale = "; ".join(self.failed)
        else:
            rationale = "all checks passed"
        return JudgmentRecord(self.subject_id, verdict, rationale, tuple(self.trail), clock())


def judge_classification(
    doc: Document,
    cls: list[Classification],
    rules: TechniqueRuleSet,
    thresholds: JudgeThresholds = JudgeThresholds(),
    clock: Callable[[], str] = _now,
) -> JudgmentRecord:
    for c in cls:
        if c.doc_id != doc.doc_id:
            raise JudgeError(f"classification for {c.doc_id!r} passed with document {doc.doc_id!r}")
        if (c.technique_id, doc.language) not in rules.rules:
            raise JudgeError(f"technique {c.technique_id}/{doc.language} is not in the rule set")

    s = _Session(doc.doc_id)
    s.desire("verify_evidence", f"every label has at least {rules.min_matches} keywords re-verifiable in the text", 1)
    s.desire("verify_score_floor", f"mean label score is at least {thresholds.score_floor}", 2)
    s.desire("verify_label_count", f"no more than {thresholds.label_ceiling} labels", 3)

    def evidence():
        if not cls:
            return False, "no evidence: the document received no labels", []
        beliefs, weak = [], []
        for c in cls:
            keywords = rules.rules[(c.technique_id, doc.language)].keywords
            verified = [
                kw for kw in c.matched_keywords
                if kw in keywords and find_phrase(doc.tokens, kw.split(" ")) is not None
            ]
            ratio = len(verified) / len(c.matched_keywords) if c.matched_keywords else 0.0
            beliefs.append(Belief(
                f"{c.technique_id}: {len(verified)} of {len(c.matched_keywords)} matched keywords found in {doc.doc_id}",
                ratio, Source.RULE_EVIDENCE, "verify_evidence",
            ))
            if len(verified) < rules.min_matches:
                weak.append(c.technique_id)
        if weak:
            return False, f"insufficient keyword evidence for {', '.join(weak)}", beliefs
        return True, f"keyword evidence verified for all {len(cls)} labels", beliefs

    def score_floor():
        if not cls:
            return True, "no labels to score", []
        mean = sum(c.score for c in cls) / len(cls)
        obs = [Belief(f"mean label score is {mean:.4f}", min(1.0, max(0.0, mean)), Source.METRIC, "verify_score_floor")]
        if mean < thresholds.score_floor:
            return False, f"mean label score {mean:.4f} below floor {thresholds.score_floor}", obs
        return True, f"mean label score {mean:.4f} meets floor {thresholds.score_floor}", obs

    def label_count():
        n = len(cls)
        obs = [Belief(f"document carries {n} labels", 1.0, Source.METRIC, "verify_label_count")]
        if n > thresholds.label_ceiling:
            return False, f"{n} labels exceed ceiling {thresholds.label_ceiling}", obs
        return True, f"{n} labels within ceiling {thresholds.label_ceiling}", obs

    s.check("verify_evidence", "keyword_reverification", Source.RULE_EVIDENCE, evidence)
    s.check("verify_score_floor", "mean_score_floor", Source.METRIC, score_floor)
    s.check("verify_label_count", "label_count_ceiling", Source.METRIC, label_count)
    return s.close(clock)


def judge_retrieval(
    query: str,
    result: RetrievalResult,
    g: KnowledgeGraph,
    thresholds: JudgeThresholds = JudgeThresholds(),
    subject_id: str | None = None,
    clock: Callable[[], str] = _now,
) -> JudgmentRecord:
    """Audit a ranking. Paths that are not walks in ``g`` raise :class:`JudgeError`."""
    for entry in result.ranked:
        try:
            validate_path(g, entry.best_path)
        except (GraphError, RetrievalError) as exc:
            raise JudgeError(f"path audit failed for {entry.doc_id}: {exc}") from None
        if f"doc:{entry.doc_id}" not in entry.best_path.nodes:
            raise JudgeError(f"best path for {entry.doc_id} does not visit that document")

    s = _Session(subject_id or query)
    s.desire("verify_relevance_floor", f"top result reward is at least {thresholds.reward_floor}", 1)
    s.desire("verify_non_empty", "at least one document is retrieved", 2)
    s.desire("verify_path_audit", "every supporting path is a walk in the graph", 3)

    def relevance():
        if not result.ranked:
            return True, "no top result to score", []
        top = result.ranked[0]
        obs = [Belief(f"top result {top.doc_id} has reward {top.score:.4f}",
                      min(1.0, max(0.0, top.score)), Source.METRIC, "verify_relevance_floor")]
        if top.score < thresholds.reward_floor:
            return False, f"top reward {top.score:.4f} below floor {thresholds.reward_floor}", obs
        return True, f"top reward {top.score:.4f} meets floor {thresholds.reward_floor}", obs

    def non_empty():
        if not result.ranked:
            return False, "no candidates retrieved", []
        return True, f"{len(result.ranked)} documents retrieved", []

    def audit():
        return True, f"{len(result.ranked)} supporting paths are valid walks", [
            Belief(f"path for {e.doc_id}: {' -> '.join(e.best_path.nodes)}", 1.0, Source.METRIC, "verify_path_audit")
            for e in result.ranked
        ]

    s.check("verify_relevance_floor", "top_reward_floor", Source.METRIC, relevance)
    s.check("verify_non_empty", "ranking_non_empty", Source.METRIC, non_empty)
    s.check("verify_path_audit", "path_validity", Source.METRIC, audit)
    return s.close(clock)


def export_trail(record: JudgmentRecord) -> bytes:
    """One JSON object per trail event, in trail order."""
    lines = [json.dumps(event.to_dict(), sort_keys=True, ensure_ascii=False) for event in record.trail]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def replay_trail(payload: bytes) -> Verdict:
    """Re-derive the verdict from an exported trail."""
    failures = 0
    external = None
    for line in payload.decode("utf-8").splitlines():
        event = json.loads(line)
        if event["kind"] != "intention" or event["status"] != Status.EXECUTED.value:
            continue
        result = event["result"]
        if result.get("verdict"):
            external = Verdict(result["verdict"])
        elif result["outcome"] is False:
            failures += 1
    return external or verdict_for(failures)


class ExternalJudge:
    """Delegates the verdict to an HTTP service.

    Request ``{"subject": ..., "evidence": ...}``; response
    ``{"verdict": "accept"|"revise"|"reject", "rationale": str}``.
    """

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def judge(self, subject_id: str, subject, evidence, clock: Callable[[], str] = _now) -> JudgmentRecord:
        body = json.dumps({"subject": subject, "evidence": evidence}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"}, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        try:
            verdict = Verdict(payload["verdict"])
            rationale = str(payload.get("rationale") or verdict.value)
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeError(f"malformed external judge response: {exc!r}") from None

        s = _Session(subject_id)
        s.desire("external_review", "obtain a verdict from the external judge", 1)
        s.trail.append(Intention("external_review", "external_judge", Status.PLANNED))
        belief = Belief(rationale, 1.0, Source.EXTERNAL, "external_review", verdict is Verdict.ACCEPT, verdict)
        s.trail.append(belief)
        s.trail.append(Intention("external_review", "external_judge", Status.EXECUTED, belief))
        s.external = verdict
        s.failed.append(rationale)
        return s.close(clock)


def external_judge_from_env(url: str | None = None) -> ExternalJudge | None:
    url = url or os.environ.get(JUDGE_URL_ENV)
    return ExternalJudge(url) if url else None
