"""Document corpus loading, text normalization and tokenization.

A corpus is stored as line-delimited JSON, one document per line::

    {"doc_id": "CELEX_32023R2841_EN", "language": "en", "body": "...",
     "title": "...", "source_url": "...", "page_refs": [1, 2]}

Only ``doc_id``, ``language`` and ``body`` are required.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from .languages import is_language_code

logger = logging.getLogger(__name__)

_WS_RE = re.compile(r"\s+")
# letters and digits only; "_" is a word char in `re` but a separator here
_TOKEN_RE = re.compile(r"[^\W_]+")

REQUIRED_KEYS = ("doc_id", "language", "body")
OPTIONAL_KEYS = ("title", "source_url", "page_refs")


class CorpusError(ValueError):
    """Raised for malformed manifests or corpus invariant violations."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def decode_utf8(raw: bytes) -> tuple[str, int]:
    """Decode UTF-8, replacing invalid sequences with U+FFFD.

    Returns the text and the number of replacements made.
    """
    text = raw.decode("utf-8", errors="replace")
    already_present = raw.count("�".encode("utf-8"))
    return text, text.count("�") - already_present


def _fold_once(text: str) -> str:
    text = unicodedata.normalize("NFD", text.casefold())
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = unicodedata.normalize("NFC", text)
    return _WS_RE.sub(" ", text).strip()


def normalize_text(raw: str | bytes) -> str:
    """Case-fold, strip diacritics, NFC-compose and collapse whitespace.

    Byte input is decoded as UTF-8 first; invalid sequences become U+FFFD and
    are logged. The result is idempotent under a second application.
    """
    if isinstance(raw, bytes):
        raw, replaced = decode_utf8(raw)
        if replaced:
            logger.warning("replaced %d invalid UTF-8 sequence(s)", replaced)
    text = _fold_once(raw)
    # casefold/compose can expose new foldable characters in rare scripts
    for _ in range(4):
        again = _fold_once(text)
        if again == text:
            break
        text = again
    return text


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    language: str
    body: str
    title: str = ""
    source_url: str | None = None
    page_refs: tuple[int, ...] | None = None

    @cached_property
    def normalized(self) -> str:
        return normalize_text(self.body)

    @cached_property
    def tokens(self) -> tuple[str, ...]:
        return tuple(tokenize(self.normalized))

    def to_record(self) -> dict:
        record: dict = {"doc_id": self.doc_id, "language": self.language, "body": self.body}
        if self.title:
            record["title"] = self.title
        if self.source_url is not None:
            record["source_url"] = self.source_url
        if self.page_refs is not None:
            record["page_refs"] = list(self.page_refs)
        return record


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    language_index: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_documents(cls, documents) -> Corpus:
        documents = tuple(documents)
        index: dict[str, list[str]] = {}
        seen: set[str] = set()
        for doc in documents:
            if doc.doc_id in seen:
                raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            index.setdefault(doc.language, []).append(doc.doc_id)
        return cls(documents, {lang: tuple(ids) for lang, ids in index.items()})

    @cached_property
    def by_id(self) -> dict[str, Document]:
        return {doc.doc_id: doc for doc in self.documents}

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, doc_id: str) -> Document:
        return self.by_id[doc_id]

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self.by_id


def document_from_record(record: object, line: int | None = None) -> Document:
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object", line)
    for key in REQUIRED_KEYS:
        if key not in record:
            raise CorpusError(f"missing required key {key!r}", line)
    unknown = set(record) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS)
    if unknown:
        raise CorpusError(f"unknown key(s) {sorted(unknown)}", line)

    doc_id, language, body = record["doc_id"], record["language"], record["body"]
    if not isinstance(doc_id, str) or not doc_id.strip():
        raise CorpusError("doc_id must be a non-empty string", line)
    if not isinstance(language, str) or not is_language_code(language):
        raise CorpusError(f"unknown language code {language!r}", line)
    if not isinstance(body, str) or not normalize_text(body):
        raise CorpusError(f"document {doc_id!r} has an empty body", line)

    title = record.get("title", "")
    if not isinstance(title, str):
        raise CorpusError("title must be a string", line)
    source_url = record.get("source_url")
    if source_url is not None and not isinstance(source_url, str):
        raise CorpusError("source_url must be a string", line)
    page_refs = record.get("page_refs")
    if page_refs is not None:
        if not isinstance(page_refs, list) or not all(
            isinstance(p, int) and not isinstance(p, bool) for p in page_refs
        ):
            raise CorpusError("page_refs must be a list of integers", line)
        page_refs = tuple(page_refs)
    return Document(doc_id, language, body, title, source_url, page_refs)


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Read a line-delimited JSON manifest into a :class:`Corpus`.

    Blank lines are skipped. Errors carry the 1-based line number of the
    offending record; for duplicates this is the later occurrence.
    """
    path = Path(manifest_path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus manifest not found: {path}")

    documents: list[Document] = []
    first_seen: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_bytes().split(b"\n"), start=1):
        if not raw.strip():
            continue
        text, replaced = decode_utf8(raw)
        if replaced:
            logger.warning("%s:%d: replaced %d invalid UTF-8 sequence(s)", path, lineno, replaced)
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON ({exc.msg})", lineno) from None
        doc = document_from_record(record, lineno)
        if doc.doc_id in first_seen:
            raise CorpusError(
                f"duplicate doc_id {doc.doc_id!r} (first seen on line {first_seen[doc.doc_id]})",
                lineno,
            )
        first_seen[doc.doc_id] = lineno
        documents.append(doc)
    return Corpus.from_documents(documents)
