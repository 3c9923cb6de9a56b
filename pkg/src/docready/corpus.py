"""Corpus ingestion, bag-of-words preprocessing, and partitioning.

Turns raw document files (JSONL, CSV, or one document per line) into
sparse count vectors over a shared vocabulary, and groups them into named
sets (typically by day) for downstream scoring.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "RawDocument",
    "Vocabulary",
    "BowDocument",
    "DocumentSet",
    "PreprocessConfig",
    "IngestError",
    "EmptyCorpusError",
    "load_default_stopwords",
    "ingest",
    "tokenize",
    "content_tokens",
    "preprocess",
    "preprocess_query",
    "partition",
    "bow_vector",
]

_URL_RE = re.compile(r"https?://\S+")
_NON_LATIN_ALNUM_RE = re.compile(r"[^A-Za-z0-9]")
# Tokens are runs of letters/digits; everything else is a boundary.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class IngestError(Exception):
    """An input file or record could not be read."""


class EmptyCorpusError(Exception):
    """Preprocessing filtered out every document or every term."""


def load_default_stopwords() -> frozenset[str]:
    """Return the packaged English stopword list."""
    data = resources.files("docready.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w for w in data.splitlines() if w)


@dataclass(frozen=True)
class RawDocument:
    """A document as ingested, before any normalization."""

    id: str
    text: str
    set_key: str | None = None


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the normalization pipeline.

    The pipeline order is fixed: lowercase, strip URLs, charset filter,
    tokenize, remove stopwords, prune rare terms, drop short documents.
    """

    stopword_list: frozenset[str] = field(default_factory=load_default_stopwords)
    min_doc_freq: int = 5
    min_doc_tokens: int = 2
    lowercase: bool = True
    strip_urls: bool = True
    charset_filter: bool = True

    def __post_init__(self) -> None:
        if self.min_doc_freq < 1:
            raise ValueError(f"min_doc_freq must be >= 1, got {self.min_doc_freq}")
        if self.min_doc_tokens < 1:
            raise ValueError(f"min_doc_tokens must be >= 1, got {self.min_doc_tokens}")


@dataclass
class Vocabulary:
    """Ordered term list with index mapping and document frequencies."""

    terms: list[str]
    term_to_index: dict[str, int]
    doc_freq: list[int]

    @classmethod
    def from_terms(cls, terms: list[str], doc_freq: list[int]) -> Vocabulary:
        if len(terms) != len(set(terms)):
            raise ValueError("vocabulary terms must be unique")
        return cls(terms=list(terms), term_to_index={t: i for i, t in enumerate(terms)}, doc_freq=list(doc_freq))

    def __len__(self) -> int:
        return len(self.terms)

    def sha256(self) -> str:
        """Digest of the ordered term list; identifies the index mapping."""
        return hashlib.sha256("\n".join(self.terms).encode("utf-8")).hexdigest()

    def to_records(self) -> list[dict]:
        return [
            {"term": t, "index": i, "doc_freq": df}
            for i, (t, df) in enumerate(zip(self.terms, self.doc_freq))
        ]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        records.sort(key=lambda r: r["index"])
        if [r["index"] for r in records] != list(range(len(records))):
            raise ValueError(f"{path}: vocabulary indices are not 0..V-1")
        return cls.from_terms([r["term"] for r in records], [r["doc_freq"] for r in records])


@dataclass(frozen=True)
class BowDocument:
    """Sparse bag-of-words counts over a vocabulary."""

    id: str
    counts: dict[int, int]
    total_tokens: int

    @classmethod
    def from_counts(cls, id: str, counts: dict[int, int]) -> BowDocument:
        if any(c < 1 for c in counts.values()):
            raise ValueError(f"document {id!r}: counts must be >= 1")
        return cls(id=id, counts=dict(counts), total_tokens=sum(counts.values()))


@dataclass
class DocumentSet:
    """A named group of documents scored as a unit."""

    key: str
    docs: list[BowDocument]


def ingest(
    path: str | Path,
    format: str = "jsonl",
    *,
    text_field: str = "text",
    id_field: str = "id",
    set_key_field: str = "set_key",
    skip_errors: bool = False,
) -> list[RawDocument]:
    """Read raw documents from a file.

    Supported formats: ``jsonl`` (objects with at least a text field),
    ``csv`` (column names configurable via the ``*_field`` arguments), and
    ``lines`` (one document per line). Missing ids default to the zero-based
    ordinal of the emitted document. Malformed records abort the run with
    their line number unless ``skip_errors`` is set, in which case they are
    logged and dropped.
    """
    path = Path(path)
    try:
        raw_text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"{path} is not valid UTF-8: {exc}") from exc

    docs: list[RawDocument] = []
    seen_ids: set[str] = set()

    def emit(record_id, text, set_key, lineno: int) -> None:
        doc_id = str(record_id) if record_id is not None else str(len(docs))
        if doc_id in seen_ids:
            problem(lineno, f"duplicate document id {doc_id!r}")
            return
        if not isinstance(text, str):
            problem(lineno, f"text field is {type(text).__name__}, expected string")
            return
        seen_ids.add(doc_id)
        docs.append(RawDocument(id=doc_id, text=text, set_key=None if set_key is None else str(set_key)))

    def problem(lineno: int, message: str) -> None:
        if skip_errors:
            logger.warning("%s:%d: %s (skipped)", path, lineno, message)
        else:
            raise IngestError(f"{path}:{lineno}: {message}")

    if format == "jsonl":
        for lineno, line in enumerate(raw_text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                problem(lineno, f"malformed JSON: {exc.msg}")
                continue
            if not isinstance(record, dict) or text_field not in record:
                problem(lineno, f"record has no {text_field!r} field")
                continue
            emit(record.get(id_field), record[text_field], record.get(set_key_field), lineno)
    elif format == "csv":
        reader = csv.DictReader(raw_text.splitlines())
        if reader.fieldnames is None or text_field not in reader.fieldnames:
            raise IngestError(f"{path}: CSV header has no {text_field!r} column")
        for row in reader:
            lineno = reader.line_num
            text = row.get(text_field)
            if text is None:
                problem(lineno, f"row is missing the {text_field!r} column")
                continue
            emit(row.get(id_field), text, row.get(set_key_field) or None, lineno)
    elif format == "lines":
        for lineno, line in enumerate(raw_text.splitlines(), start=1):
            emit(None, line, None, lineno)
    else:
        raise IngestError(f"unknown input format {format!r} (expected jsonl, csv, or lines)")

    return docs


def tokenize(text: str, cfg: PreprocessConfig) -> list[str]:
    """Normalize ``text`` and split it into tokens.

    Applies, in order: lowercasing, URL removal, the Latin-letters-and-digits
    charset filter, and splitting on non-alphanumeric boundaries. Stopword
    removal is a separate, later stage.
    """
    if cfg.lowercase:
        text = text.lower()
    if cfg.strip_urls:
        text = _URL_RE.sub(" ", text)
    if cfg.charset_filter:
        text = _NON_LATIN_ALNUM_RE.sub(" ", text)
    return _TOKEN_RE.findall(text)


def content_tokens(text: str, cfg: PreprocessConfig | None = None) -> list[str]:
    """Tokenize and drop stopwords, keeping the original token order."""
    cfg = cfg or PreprocessConfig()
    return [t for t in tokenize(text, cfg) if t not in cfg.stopword_list]


def preprocess(
    docs: list[RawDocument], cfg: PreprocessConfig | None = None
) -> tuple[list[BowDocument], Vocabulary]:
    """Build bag-of-words documents and the corpus vocabulary.

    Terms appearing in fewer than ``cfg.min_doc_freq`` documents are pruned,
    then documents left with fewer than ``cfg.min_doc_tokens`` token
    instances are dropped. Pruning happens in a single pass: document
    frequencies are counted once, before short documents are removed, and
    are not recomputed afterwards. Vocabulary indices follow first
    occurrence order, so the result is deterministic for a given input
    order and config.
    """
    cfg = cfg or PreprocessConfig()
    if not docs:
        raise EmptyCorpusError("no documents to preprocess")

    tokenized = [content_tokens(d.text, cfg) for d in docs]

    doc_freq: Counter[str] = Counter()
    first_seen: list[str] = []
    seen: set[str] = set()
    for toks in tokenized:
        doc_freq.update(set(toks))
        for t in toks:
            if t not in seen:
                seen.add(t)
                first_seen.append(t)

    kept_terms = [t for t in first_seen if doc_freq[t] >= cfg.min_doc_freq]
    if not kept_terms:
        raise EmptyCorpusError(
            f"no term reaches min_doc_freq={cfg.min_doc_freq}; corpus is empty after pruning"
        )
    vocab = Vocabulary.from_terms(kept_terms, [doc_freq[t] for t in kept_terms])

    bows: list[BowDocument] = []
    n_dropped = 0
    for raw, toks in zip(docs, tokenized):
        counts: Counter[int] = Counter(
            vocab.term_to_index[t] for t in toks if t in vocab.term_to_index
        )
        total = sum(counts.values())
        if total < cfg.min_doc_tokens:
            n_dropped += 1
            continue
        bows.append(BowDocument(id=raw.id, counts=dict(counts), total_tokens=total))

    if n_dropped:
        logger.info(
            "dropped %d/%d documents with fewer than %d surviving tokens",
            n_dropped, len(docs), cfg.min_doc_tokens,
        )
    if not bows:
        raise EmptyCorpusError("every document was filtered out during preprocessing")
    return bows, vocab


def preprocess_query(
    text: str, vocab: Vocabulary, cfg: PreprocessConfig | None = None
) -> tuple[BowDocument, list[str]]:
    """Run the document pipeline on a query against an existing vocabulary.

    Queries are never dropped for being short. Out-of-vocabulary terms are
    removed and returned (in first-occurrence order) so callers can warn or
    abort; a query whose every term is out of vocabulary comes back with
    empty counts.
    """
    cfg = cfg or PreprocessConfig()
    toks = content_tokens(text, cfg)
    counts: Counter[int] = Counter()
    dropped: list[str] = []
    for t in toks:
        idx = vocab.term_to_index.get(t)
        if idx is None:
            if t not in dropped:
                dropped.append(t)
        else:
            counts[idx] += 1
    if dropped:
        logger.warning("query terms not in vocabulary, dropped: %s", ", ".join(dropped))
    bow = BowDocument(id="query", counts=dict(counts), total_tokens=sum(counts.values()))
    return bow, dropped


def partition(docs: list[BowDocument], raws: list[RawDocument]) -> list[DocumentSet]:
    """Group documents into one set per distinct ``set_key``.

    Documents whose raw record has no key fall into the ``_unkeyed`` set.
    Sets are returned sorted lexicographically by key. Keys whose documents
    were all filtered out during preprocessing are logged and omitted.
    """
    key_by_id = {r.id: r.set_key for r in raws}
    sets: dict[str, list[BowDocument]] = {}
    for d in docs:
        if d.id not in key_by_id:
            raise ValueError(f"document {d.id!r} has no matching raw record")
        key = key_by_id[d.id] or "_unkeyed"
        sets.setdefault(key, []).append(d)

    for key in sorted({r.set_key or "_unkeyed" for r in raws} - sets.keys()):
        logger.warning("set %r is empty after preprocessing; dropped", key)
    return [DocumentSet(key=k, docs=sets[k]) for k in sorted(sets)]


def bow_vector(d: BowDocument, V: int) -> np.ndarray:
    """Densify a document's counts into a length-``V`` integer vector."""
    vec = np.zeros(V, dtype=np.int64)
    for idx, count in d.counts.items():
        if not 0 <= idx < V:
            raise ValueError(f"document {d.id!r}: term index {idx} out of range for V={V}")
        vec[idx] = count
    return vec
