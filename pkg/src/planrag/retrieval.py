"""Document supply: chunked corpus store, lexical retriever, HTTP retriever.

Articles are segmented into non-overlapping 100-word chunks (a word being a
maximal run of non-whitespace; concatenating a source's chunks in order
reproduces its word sequence).  The local retriever scores chunks with a
BM25-style formula documented on the class; an HTTP client covers external
retrieval services.
"""

from __future__ import annotations

import json
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .errors import EmptyCorpus, EndpointUnavailable
from .textutils import index_tokens, word_split

MANIFEST_NAME = "manifest.json"
CHUNKS_NAME = "chunks.jsonl"
STORE_FORMAT = "planrag-chunkstore"
STORE_VERSION = 1
DEFAULT_CHUNK_WORDS = 100


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    source_id: str
    score: float = 0.0


@dataclass(frozen=True)
class RetrievalSet:
    query: str
    documents: tuple[Document, ...]
    k: int


class ChunkStore:
    """Chunked corpus plus per-term statistics for lexical scoring.

    Read-only after construction; the statistics index is rebuilt from the
    chunk file whenever an on-disk store is opened.
    """

    def __init__(
        self,
        chunks: Sequence[Document],
        chunk_words: int = DEFAULT_CHUNK_WORDS,
        warnings: Sequence[str] = (),
    ):
        self.chunks = list(chunks)
        self.chunk_words = chunk_words
        self.warnings = list(warnings)
        self.term_freqs: list[Counter] = []
        self.chunk_lens: list[int] = []
        self.doc_freq: Counter = Counter()
        for doc in self.chunks:
            tokens = index_tokens(doc.text)
            freqs = Counter(tokens)
            self.term_freqs.append(freqs)
            self.chunk_lens.append(len(tokens))
            for term in freqs:
                self.doc_freq[term] += 1
        self.num_chunks = len(self.chunks)
        self.avg_len = (sum(self.chunk_lens) / self.num_chunks) if self.num_chunks else 0.0

    @property
    def num_sources(self) -> int:
        return len({d.source_id for d in self.chunks})

    def save(self, path) -> Path:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "chunk_words": self.chunk_words,
            "num_chunks": self.num_chunks,
            "num_sources": self.num_sources,
        }
        (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        with (out / CHUNKS_NAME).open("w", encoding="utf-8") as fh:
            for doc in self.chunks:
                fh.write(
                    json.dumps(
                        {"doc_id": doc.doc_id, "source_id": doc.source_id, "text": doc.text},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        return out

    @classmethod
    def open(cls, path) -> "ChunkStore":
        root = Path(path)
        manifest = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
        if manifest.get("format") != STORE_FORMAT:
            raise ValueError(f"{path} is not a chunk store (format={manifest.get('format')!r})")
        chunks = []
        with (root / CHUNKS_NAME).open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    chunks.append(Document(row["doc_id"], row["text"], row["source_id"]))
        return cls(chunks, chunk_words=manifest.get("chunk_words", DEFAULT_CHUNK_WORDS))


def ingest_corpus(
    articles: Iterable[tuple[str, str]],
    out_dir=None,
    chunk_words: int = DEFAULT_CHUNK_WORDS,
) -> ChunkStore:
    """Chunk (source_id, text) pairs into a store; optionally persist it.

    A re-ingested source id replaces the earlier text, with a warning.
    """
    per_source: dict[str, str] = {}
    warnings: list[str] = []
    for source_id, text in articles:
        sid = str(source_id)
        if sid in per_source:
            warnings.append(f"source {sid!r} ingested twice; keeping the later text")
        per_source[sid] = text
    chunks: list[Document] = []
    for sid, text in per_source.items():
        words = word_split(text)
        for seq, start in enumerate(range(0, len(words), chunk_words)):
            chunks.append(
                Document(
                    doc_id=f"{sid}#{seq:04d}",
                    text=" ".join(words[start : start + chunk_words]),
                    source_id=sid,
                )
            )
    if not chunks:
        raise EmptyCorpus()
    store = ChunkStore(chunks, chunk_words=chunk_words, warnings=warnings)
    if out_dir is not None:
        store.save(out_dir)
    return store


class LexicalRetriever:
    """BM25-style scorer over a ChunkStore.

    For each distinct query term t with document frequency df over N chunks:

        idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))        (always > 0)
        score(t, c) = idf(t) * tf * (k1 + 1)
                      / (tf + k1 * (1 - b + b * len(c) / avg_len))

    and a chunk's score is the sum over query terms.  Only chunks matching at
    least one term are candidates; ties break by doc_id ascending, so results
    are fully deterministic.
    """

    def __init__(self, store: ChunkStore, k1: float = 1.5, b: float = 0.75):
        self.store = store
        self.k1 = k1
        self.b = b

    def _idf(self, term: str) -> float:
        df = self.store.doc_freq.get(term, 0)
        n = self.store.num_chunks
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def retrieve(self, query: str, k: int = 5) -> RetrievalSet:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = list(dict.fromkeys(index_tokens(query)))
        scored: list[tuple[float, Document]] = []
        for i, doc in enumerate(self.store.chunks):
            freqs = self.store.term_freqs[i]
            length = self.store.chunk_lens[i]
            score = 0.0
            for term in terms:
                tf = freqs.get(term, 0)
                if not tf:
                    continue
                denom = tf + self.k1 * (1 - self.b + self.b * length / self.store.avg_len)
                score += self._idf(term) * tf * (self.k1 + 1) / denom
            if score > 0.0:
                scored.append((score, doc))
        scored.sort(key=lambda pair: (-pair[0], pair[1].doc_id))
        top = tuple(replace(doc, score=score) for score, doc in scored[:k])
        return RetrievalSet(query=query, documents=top, k=k)


class HttpRetriever:
    """POST {query, k} to an external retrieval service; map its documents."""

    def __init__(self, endpoint: str, timeout: float = 30.0, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def retrieve(self, query: str, k: int = 5) -> RetrievalSet:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        try:
            response = self._client.post(self.endpoint, json={"query": query, "k": k})
        except httpx.HTTPError as exc:
            raise EndpointUnavailable(str(exc)) from exc
        if response.status_code != 200:
            raise EndpointUnavailable(f"retriever returned status {response.status_code}")
        documents = []
        for row in response.json().get("documents", []):
            doc_id = str(row.get("id", ""))
            documents.append(
                Document(
                    doc_id=doc_id,
                    text=row.get("text", ""),
                    source_id=doc_id.split("#", 1)[0] or doc_id,
                    score=float(row.get("score", 0.0)),
                )
            )
        return RetrievalSet(query=query, documents=tuple(documents[:k]), k=k)


class ScriptedRetriever:
    """Canned retrieval for tests: first matching substring rule wins.

    Logs every (query, k) call; an optional delay simulates retrieval time.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, Sequence[Document]]] = (),
        default: Sequence[Document] = (),
        delay: float = 0.0,
    ):
        self.rules = [(sub, tuple(docs)) for sub, docs in rules]
        self.default = tuple(default)
        self.delay = delay
        self._lock = threading.Lock()
        self.calls: list[tuple[str, int]] = []

    def retrieve(self, query: str, k: int = 5) -> RetrievalSet:
        with self._lock:
            self.calls.append((query, k))
        if self.delay:
            time.sleep(self.delay)
        for substring, docs in self.rules:
            if substring in query:
                return RetrievalSet(query=query, documents=docs[:k], k=k)
        return RetrievalSet(query=query, documents=self.default[:k], k=k)
