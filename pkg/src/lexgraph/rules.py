"""Keyword rules mapping documents to MITRE ATT&CK techniques.

Each (technique, language) pair owns a curated keyword list. A document is
labelled with a technique when at least ``min_matches`` distinct keyword
phrases occur in it as contiguous token runs; the score is
``min(1, matches / saturation)``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Document, normalize_text, tokenize
from .languages import is_language_code

logger = logging.getLogger(__name__)

TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")

MAX_PHRASE_TOKENS = 4
CURATED_RANGE = (15, 20)
HARD_RANGE = (1, 64)
DEFAULT_MIN_MATCHES = 2
DEFAULT_SATURATION = 5


class RuleError(ValueError):
    pass


class NoRulesForLanguage(LookupError):
    """The rule set has no rule at all for a document's language."""

    def __init__(self, language: str, doc_id: str | None = None):
        self.language = language
        self.doc_id = doc_id
        where = f" (document {doc_id!r})" if doc_id else ""
        super().__init__(f"no rules for language {language!r}{where}")


@dataclass(frozen=True)
class TechniqueRule:
    technique_id: str
    language: str
    keywords: tuple[str, ...]
    name: str = ""

    @property
    def phrases(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tuple(kw.split(" ")) for kw in self.keywords)


@dataclass(frozen=True)
class TechniqueRuleSet:
    rules: dict[tuple[str, str], TechniqueRule]
    min_matches: int = DEFAULT_MIN_MATCHES
    saturation: int = DEFAULT_SATURATION

    def __post_init__(self):
        if self.min_matches < 1 or self.saturation < 1:
            raise RuleError("min_matches and saturation must be positive")
        if self.min_matches > self.saturation:
            raise RuleError(
                f"min_matches ({self.min_matches}) exceeds saturation ({self.saturation})"
            )

    @property
    def languages(self) -> set[str]:
        return {lang for _, lang in self.rules}

    @property
    def technique_ids(self) -> list[str]:
        return sorted({tid for tid, _ in self.rules})

    def for_language(self, language: str) -> list[TechniqueRule]:
        return [r for (_, lang), r in sorted(self.rules.items()) if lang == language]

    def technique_name(self, technique_id: str) -> str:
        for (tid, _), rule in sorted(self.rules.items()):
            if tid == technique_id and rule.name:
                return rule.name
        return technique_id

    def keywords_for(self, technique_id: str) -> list[str]:
        """All keywords of a technique across languages, in rule-file order per language."""
        out: list[str] = []
        for (tid, _), rule in sorted(self.rules.items()):
            if tid == technique_id:
                out.extend(rule.keywords)
        return out


@dataclass(frozen=True)
class Classification:
    doc_id: str
    technique_id: str
    score: float
    matched_keywords: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "technique_id": self.technique_id,
            "score": self.score,
            "matched_keywords": list(self.matched_keywords),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Classification:
        return cls(
            data["doc_id"],
            data["technique_id"],
            float(data["score"]),
            tuple(data["matched_keywords"]),
        )


def _normalize_keyword(raw: str) -> str:
    return " ".join(tokenize(normalize_text(raw)))


def build_rule(technique_id: str, language: str, keywords, name: str = "") -> TechniqueRule:
    """Validate and normalize one rule. Warns when the keyword count is outside 15..20."""
    if not isinstance(technique_id, str) or not TECHNIQUE_ID_RE.match(technique_id):
        raise RuleError(f"malformed technique id {technique_id!r}")
    if not isinstance(language, str) or not is_language_code(language):
        raise RuleError(f"{technique_id}: unknown language code {language!r}")
    if not isinstance(keywords, (list, tuple)) or not keywords:
        raise RuleError(f"{technique_id}/{language}: empty keyword list")

    normalized: list[str] = []
    for raw in keywords:
        if not isinstance(raw, str):
            raise RuleError(f"{technique_id}/{language}: keyword {raw!r} is not a string")
        kw = _normalize_keyword(raw)
        n_tokens = len(kw.split()) if kw else 0
        if not 1 <= n_tokens <= MAX_PHRASE_TOKENS:
            raise RuleError(
                f"{technique_id}/{language}: keyword {raw!r} has {n_tokens} tokens "
                f"(allowed 1..{MAX_PHRASE_TOKENS})"
            )
        if kw in normalized:
            raise RuleError(f"{technique_id}/{language}: duplicate keyword {kw!r} after normalization")
        normalized.append(kw)

    count = len(normalized)
    if not HARD_RANGE[0] <= count <= HARD_RANGE[1]:
        raise RuleError(
            f"{technique_id}/{language}: {count} keywords, allowed {HARD_RANGE[0]}..{HARD_RANGE[1]}"
        )
    if not CURATED_RANGE[0] <= count <= CURATED_RANGE[1]:
        logger.warning(
            "%s/%s: %d keywords, curated lists are expected to hold %d-%d",
            technique_id, language, count, *CURATED_RANGE,
        )
    return TechniqueRule(technique_id, language, tuple(normalized), name)


def rules_from_dict(data: dict) -> TechniqueRuleSet:
    if not isinstance(data, dict) or not isinstance(data.get("rules"), list):
        raise RuleError("rules file must be an object with a 'rules' array")
    min_matches = data.get("min_matches", DEFAULT_MIN_MATCHES)
    saturation = data.get("saturation", DEFAULT_SATURATION)
    for key, value in (("min_matches", min_matches), ("saturation", saturation)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise RuleError(f"{key} must be a positive integer, got {value!r}")

    rules: dict[tuple[str, str], TechniqueRule] = {}
    for entry in data["rules"]:
        if not isinstance(entry, dict):
            raise RuleError(f"rule entry {entry!r} is not an object")
        rule = build_rule(
            entry.get("technique_id"),
            entry.get("language"),
            entry.get("keywords"),
            entry.get("name", ""),
        )
        key = (rule.technique_id, rule.language)
        if key in rules:
            raise RuleError(f"duplicate rule for {key[0]}/{key[1]}")
        rules[key] = rule
    return TechniqueRuleSet(rules, min_matches, saturation)


def load_rules(path: str | Path) -> TechniqueRuleSet:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"rules file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RuleError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return rules_from_dict(data)


def find_phrase(tokens, phrase) -> int | None:
    """Token offset of the first contiguous occurrence of ``phrase``, else None."""
    n = len(phrase)
    first = phrase[0]
    for i in range(len(tokens) - n + 1):
        if tokens[i] == first and tuple(tokens[i:i + n]) == tuple(phrase):
            return i
    return None


def _ngrams(tokens, max_n: int) -> set[tuple[str, ...]]:
    grams: set[tuple[str, ...]] = set()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            grams.add(tuple(tokens[i:i + n]))
    return grams


def classify(doc: Document, rules: TechniqueRuleSet) -> list[Classification]:
    """Label ``doc`` with every technique whose rule it matches.

    Only rules of the document's own language are consulted. Results are
    sorted by score descending, then technique id.
    """
    candidates = rules.for_language(doc.language)
    if not candidates:
        raise NoRulesForLanguage(doc.language, doc.doc_id)

    grams = _ngrams(doc.tokens, MAX_PHRASE_TOKENS)
    out: list[Classification] = []
    for rule in candidates:
        matched = tuple(kw for kw, phrase in zip(rule.keywords, rule.phrases) if phrase in grams)
        if matched and len(matched) >= rules.min_matches:
            score = min(1.0, len(matched) / rules.saturation)
            out.append(Classification(doc.doc_id, rule.technique_id, score, matched))
    out.sort(key=lambda c: (-c.score, c.technique_id))
    return out


@dataclass(frozen=True)
class KeywordEvidence:
    keyword: str
    token_offset: int


@dataclass(frozen=True)
class Explanation:
    doc_id: str
    technique_id: str
    technique_name: str
    language: str
    score: float
    evidence: tuple[KeywordEvidence, ...]

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "technique_id": self.technique_id,
            "technique_name": self.technique_name,
            "language": self.language,
            "score": self.score,
            "evidence": [{"keyword": e.keyword, "token_offset": e.token_offset} for e in self.evidence],
        }


def explain(classification: Classification, rules: TechniqueRuleSet, doc: Document) -> Explanation:
    """List each matched keyword with its first token offset in ``doc``."""
    if not classification.matched_keywords:
        raise RuleError(f"classification {classification.doc_id}/{classification.technique_id} has no matched keywords")
    if classification.doc_id != doc.doc_id:
        raise RuleError(f"classification is for {classification.doc_id!r}, not {doc.doc_id!r}")
    rule = rules.rules.get((classification.technique_id, doc.language))
    if rule is None:
        raise RuleError(f"technique {classification.technique_id}/{doc.language} is not in the rule set")

    evidence = []
    for kw in classification.matched_keywords:
        if kw not in rule.keywords:
            raise RuleError(f"{kw!r} is not a keyword of {rule.technique_id}/{rule.language}")
        offset = find_phrase(doc.tokens, kw.split(" "))
        if offset is None:
            raise RuleError(f"keyword {kw!r} does not occur in {doc.doc_id}")
        evidence.append(KeywordEvidence(kw, offset))
    return Explanation(
        doc.doc_id,
        rule.technique_id,
        rules.technique_name(rule.technique_id),
        doc.language,
        classification.score,
        tuple(evidence),
    )
