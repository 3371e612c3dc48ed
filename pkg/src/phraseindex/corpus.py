"""Corpus ingestion, deterministic tokenization, and candidate span enumeration."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

_CHUNK_RE = re.compile(r"\S+")
_PUNCT = frozenset(string.punctuation)


@dataclass(frozen=True)
class Token:
    """A surface form with its character range in the paragraph text."""

    surface: str
    char_start: int
    char_end: int


@dataclass
class Paragraph:
    raw_text: str
    tokens: list[Token]

    @classmethod
    def from_text(cls, text: str) -> "Paragraph":
        return cls(raw_text=text, tokens=tokenize(text))

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]


@dataclass
class Document:
    id: str
    title: str
    paragraphs: list[Paragraph]


@dataclass(frozen=True)
class SpanRef:
    """A token span [i, j] (inclusive) inside one paragraph of one document."""

    doc_id: str
    para_idx: int
    i: int
    j: int


def tokenize(text: str) -> list[Token]:
    """Split on whitespace and detach leading/trailing punctuation characters.

    Deterministic, and every token's surface equals the raw-text slice
    [char_start, char_end). Lowercasing happens downstream, for sparse
    features only.
    """
    out: list[Token] = []
    for m in _CHUNK_RE.finditer(text):
        chunk = m.group()
        base = m.start()
        lo, hi = 0, len(chunk)
        while lo < hi and chunk[lo] in _PUNCT:
            out.append(Token(chunk[lo], base + lo, base + lo + 1))
            lo += 1
        trailing: list[Token] = []
        while hi > lo and chunk[hi - 1] in _PUNCT:
            trailing.append(Token(chunk[hi - 1], base + hi - 1, base + hi))
            hi -= 1
        if lo < hi:
            out.append(Token(chunk[lo:hi], base + lo, base + hi))
        out.extend(reversed(trailing))
    return out


def enumerate_spans(
    para: Paragraph, max_span: int, doc_id: str = "", para_idx: int = 0
) -> list[SpanRef]:
    """All spans (i, j) with j - i < max_span, in (i, j) lexicographic order."""
    if max_span < 1:
        raise ValueError(f"max_span must be >= 1, got {max_span}")
    n = para.n_tokens
    return [
        SpanRef(doc_id, para_idx, i, j)
        for i in range(n)
        for j in range(i, min(i + max_span, n))
    ]


class CorpusStore:
    """Immutable-after-load collection of documents; safe for concurrent readers."""

    def __init__(self, documents: list[Document]):
        if not documents:
            raise ValueError("empty corpus")
        self.documents = documents
        self._by_id: dict[str, Document] = {}
        self._ordinal: dict[str, int] = {}
        for ord_, doc in enumerate(documents):
            if doc.id in self._by_id:
                raise ValueError(f"duplicate document id {doc.id!r}")
            if not doc.paragraphs:
                raise ValueError(f"document {doc.id!r} has no paragraphs")
            self._by_id[doc.id] = doc
            self._ordinal[doc.id] = ord_

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    @property
    def n_docs(self) -> int:
        return len(self.documents)

    def doc(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def doc_by_ordinal(self, ordinal: int) -> Document:
        return self.documents[ordinal]

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal[doc_id]

    def total_tokens(self) -> int:
        return sum(p.n_tokens for d in self.documents for p in d.paragraphs)

    def iter_paragraphs(self) -> Iterator[tuple[int, Document, int, Paragraph]]:
        """Yield (doc ordinal, document, paragraph index, paragraph) in corpus order."""
        for ord_, doc in enumerate(self.documents):
            for pidx, para in enumerate(doc.paragraphs):
                yield ord_, doc, pidx, para

    def span_text(self, ref: SpanRef) -> str:
        para = self._by_id[ref.doc_id].paragraphs[ref.para_idx]
        return para.raw_text[para.tokens[ref.i].char_start : para.tokens[ref.j].char_end]

    def to_jsonl(self) -> str:
        """Canonical one-document-per-line serialization (deterministic bytes)."""
        lines = []
        for doc in self.documents:
            rec = {
                "id": doc.id,
                "title": doc.title,
                "paragraphs": [p.raw_text for p in doc.paragraphs],
            }
            lines.append(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        return "\n".join(lines) + "\n"


def _parse_doc_record(rec: dict, line_no: int) -> Document:
    try:
        doc_id = rec["id"]
        title = rec["title"]
        paragraphs = rec["paragraphs"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"line {line_no}: missing field {exc}") from exc
    if not isinstance(doc_id, str) or not isinstance(title, str):
        raise ValueError(f"line {line_no}: id and title must be strings")
    if not isinstance(paragraphs, list) or not paragraphs:
        raise ValueError(f"line {line_no}: paragraphs must be a non-empty list")
    if not all(isinstance(p, str) for p in paragraphs):
        raise ValueError(f"line {line_no}: paragraphs must be strings")
    return Document(
        id=doc_id, title=title, paragraphs=[Paragraph.from_text(p) for p in paragraphs]
    )


def load_corpus(path: str | Path, format: str = "jsonl") -> CorpusStore:
    """Load a JSON-lines corpus: one {"id", "title", "paragraphs"} object per line."""
    if format != "jsonl":
        raise ValueError(f"unknown corpus format {format!r}")
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            docs.append(_parse_doc_record(rec, line_no))
    if not docs:
        raise ValueError("empty corpus")
    return CorpusStore(docs)


@dataclass
class QaRecord:
    """One question with its gold answers and optional provenance."""

    question: str
    answers: list[str]
    doc_id: str | None = None
    answer_span: tuple[int, int, int] | None = None  # (para_idx, char_start, char_end)


def load_qa(path: str | Path) -> list[QaRecord]:
    """Load a JSON-lines QA set: {"question", "answers", "doc_id"?, "answer_span"?}."""
    records: list[QaRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            try:
                question = rec["question"]
                answers = rec["answers"]
            except (KeyError, TypeError) as exc:
                raise ValueError(f"line {line_no}: missing field {exc}") from exc
            span = rec.get("answer_span")
            records.append(
                QaRecord(
                    question=question,
                    answers=list(answers),
                    doc_id=rec.get("doc_id"),
                    answer_span=tuple(span) if span is not None else None,
                )
            )
    return records
