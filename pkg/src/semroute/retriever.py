"""BM25 retrieval over a JSONL corpus.

Okapi BM25 with k1 = 1.2, b = 0.75 and the smoothed idf

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

which is strictly positive, so every matching document scores above zero.
Tokenization is lowercase with splits on every non-alphanumeric character;
no stemming, no stopwords. Query tokens contribute once per occurrence.

Results come back sorted by descending score with ties broken by ascending
doc_id, so rankings are reproducible across runs and platforms. The index
persists to a single JSON file carrying a mandatory format version.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import CorpusNotFound, DataError, DuplicateDocId, IndexNotBuilt, MalformedRecord
from .text import search_tokens

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_TOP_K = 5
INDEX_FORMAT_VERSION = 1
INDEX_FILENAME = "index.json"


@dataclass(frozen=True)
class Document:
    """One retrievable passage."""

    doc_id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class ScoredDocument:
    document: Document
    score: float

    def to_dict(self) -> dict:
        return {"doc_id": self.document.doc_id, "score": self.score}


@dataclass(frozen=True)
class IndexStats:
    num_docs: int
    num_terms: int
    avg_doc_len: float

    def to_dict(self) -> dict:
        return {
            "num_docs": self.num_docs,
            "num_terms": self.num_terms,
            "avg_doc_len": self.avg_doc_len,
        }


class BM25Index:
    """In-memory inverted index with JSON persistence."""

    def __init__(self) -> None:
        self._documents: list[Document] = []
        self._doc_lens: list[int] = []
        # term -> list of (doc position, term frequency)
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._built = False

    # --- construction -------------------------------------------------------

    def build(self, documents: list[Document]) -> IndexStats:
        """Index the given documents, replacing any previous content.

        Raises:
            DuplicateDocId: Two documents share a doc_id.
        """
        seen: set[str] = set()
        for doc in documents:
            if doc.doc_id in seen:
                raise DuplicateDocId(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
        self._documents = list(documents)
        self._doc_lens = []
        self._postings = {}
        for position, doc in enumerate(self._documents):
            tokens = search_tokens(doc.text)
            self._doc_lens.append(len(tokens))
            for term, tf in sorted(Counter(tokens).items()):
                self._postings.setdefault(term, []).append((position, tf))
        self._built = True
        logger.info(
            "indexed %d documents, %d terms", len(self._documents), len(self._postings)
        )
        return self.stats()

    def stats(self) -> IndexStats:
        self._require_built()
        total = sum(self._doc_lens)
        n = len(self._documents)
        return IndexStats(
            num_docs=n,
            num_terms=len(self._postings),
            avg_doc_len=(total / n) if n else 0.0,
        )

    def _require_built(self) -> None:
        if not self._built:
            raise IndexNotBuilt("no corpus has been ingested yet")

    # --- search -------------------------------------------------------------

    def _idf(self, term: str) -> float:
        df = len(self._postings.get(term, ()))
        n = len(self._documents)
        return math.log(1 + (n - df + 0.5) / (df + 0.5))

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[ScoredDocument]:
        """Top-k documents for the query.

        Args:
            query: Free-text query; tokenized like documents.
            k: Maximum results; fewer return when fewer documents match.

        Returns:
            ScoredDocuments sorted by (-score, doc_id). Documents matching no
            query term are never returned, so the list may be empty.

        Raises:
            IndexNotBuilt: Before any successful build/load.
            ValueError: k < 1.
        """
        self._require_built()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = search_tokens(query)
        if not terms or not self._documents:
            return []
        n = len(self._documents)
        avg_len = sum(self._doc_lens) / n
        scores: dict[int, float] = {}
        for term in terms:  # repeated query terms contribute per occurrence
            postings = self._postings.get(term)
            if not postings:
                continue
            idf = self._idf(term)
            for position, tf in postings:
                if avg_len > 0:
                    length_norm = 1 - BM25_B + BM25_B * self._doc_lens[position] / avg_len
                else:
                    length_norm = 1.0
                gain = idf * (tf * (BM25_K1 + 1)) / (tf + BM25_K1 * length_norm)
                scores[position] = scores.get(position, 0.0) + gain
        ranked = sorted(
            scores.items(), key=lambda item: (-item[1], self._documents[item[0]].doc_id)
        )
        return [
            ScoredDocument(document=self._documents[position], score=score)
            for position, score in ranked[:k]
        ]

    # --- persistence --------------------------------------------------------

    def save(self, index_dir: str | Path) -> Path:
        """Write the index under index_dir; returns the file path."""
        self._require_built()
        directory = Path(index_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / INDEX_FILENAME
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "params": {"k1": BM25_K1, "b": BM25_B},
            "documents": [
                {"doc_id": d.doc_id, "title": d.title, "text": d.text}
                for d in self._documents
            ],
        }
        path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, index_dir: str | Path) -> "BM25Index":
        """Load a previously saved index.

        Raises:
            DataError: Missing file, wrong version, or malformed payload.
        """
        path = Path(index_dir) / INDEX_FILENAME
        if not path.is_file():
            raise DataError(f"no index found at {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        version = payload.get("format_version") if isinstance(payload, dict) else None
        if version != INDEX_FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported index format version {version!r}, "
                f"expected {INDEX_FORMAT_VERSION}"
            )
        try:
            documents = [
                Document(doc_id=d["doc_id"], title=d.get("title", ""), text=d["text"])
                for d in payload["documents"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed document list ({exc})") from exc
        index = cls()
        index.build(documents)
        return index


def parse_corpus_line(line: str, path: str, line_number: int) -> Document:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(path, line_number, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise MalformedRecord(path, line_number, "expected a JSON object")
    doc_id = raw.get("doc_id")
    text = raw.get("text")
    if not isinstance(doc_id, str) or not doc_id:
        raise MalformedRecord(path, line_number, "missing or empty 'doc_id'")
    if not isinstance(text, str) or not text:
        raise MalformedRecord(path, line_number, "missing or empty 'text'")
    title = raw.get("title", "")
    if not isinstance(title, str):
        raise MalformedRecord(path, line_number, "'title' must be a string")
    return Document(doc_id=doc_id, title=title, text=text)


def ingest_corpus(corpus_path: str | Path) -> BM25Index:
    """Read a JSONL corpus ({"doc_id", "title", "text"} per line) and index it.

    Blank lines are rejected like any other malformed record so silent
    truncation never goes unnoticed. An empty file yields a searchable index
    with zero documents.

    Raises:
        CorpusNotFound: Path does not exist (usage error).
        MalformedRecord: Unparseable or invalid line, cited by line number.
        DuplicateDocId: Repeated doc_id.
    """
    path = Path(corpus_path)
    if not path.is_file():
        raise CorpusNotFound(f"corpus not found: {path}")
    documents = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if line.strip() == "":
                raise MalformedRecord(str(path), line_number, "blank line")
            doc = parse_corpus_line(line, str(path), line_number)
            if doc.doc_id in seen:
                raise DuplicateDocId(
                    f"{path}, line {line_number}: duplicate doc_id {doc.doc_id!r}"
                )
            seen.add(doc.doc_id)
            documents.append(doc)
    index = BM25Index()
    index.build(documents)
    return index
