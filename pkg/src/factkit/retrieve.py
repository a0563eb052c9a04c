"""Knowledge retrieval over a sentence index.

The native reference scores tf-idf cosine between the (concatenated) dialog
context and each indexed sentence.  Embedding-based retrievers can be mounted
behind the same call shape, either as a callable or over HTTP with the wire
schema of :class:`RetrievalResult`; the ground-truth configuration bypasses
retrieval entirely and uses the datapoint's own knowledge sentence.
"""

from __future__ import annotations

import json
import math
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import textops
from .errors import FactkitError, SchemaError, TransportError

CONTEXT_MODES = ("all", "last")


@dataclass(frozen=True)
class RetrievalResult:
    sentence_id: str
    text: str
    score: float


def _terms(text: str) -> list[str]:
    return [tok.text.lower() for tok in textops.tokenize(text)
            if any(ch.isalnum() for ch in tok.text)]


class KnowledgeIndex:
    """Immutable tf-idf index over (id, sentence) pairs.

    idf uses add-one smoothing: ``1 + ln((1 + N) / (1 + df))``.
    """

    def __init__(self, sentences: Sequence[tuple[str, str]]):
        if not sentences:
            raise FactkitError("cannot build an index from zero sentences")
        ids = [sid for sid, _ in sentences]
        if len(set(ids)) != len(ids):
            dupes = sorted({sid for sid in ids if ids.count(sid) > 1})
            raise FactkitError(f"duplicate sentence ids: {dupes[:5]}")
        self.sentences: list[tuple[str, str]] = [(str(sid), text) for sid, text in sentences]
        self.term_stats: dict[str, int] = {}
        self._term_counts: list[Counter[str]] = []
        for _, text in self.sentences:
            counts = Counter(_terms(text))
            self._term_counts.append(counts)
            for term in counts:
                self.term_stats[term] = self.term_stats.get(term, 0) + 1
        n = len(self.sentences)
        self._idf = {t: 1.0 + math.log((1 + n) / (1 + df))
                     for t, df in self.term_stats.items()}
        self._vectors = []
        self._norms = []
        for counts in self._term_counts:
            vec = {t: c * self._idf[t] for t, c in counts.items()}
            self._vectors.append(vec)
            self._norms.append(math.sqrt(sum(w * w for w in vec.values())))

    def __len__(self) -> int:
        return len(self.sentences)

    def score(self, query_terms: Sequence[str], i: int) -> float:
        counts = Counter(t for t in query_terms if t in self._idf)
        if not counts:
            return 0.0
        qvec = {t: c * self._idf[t] for t, c in counts.items()}
        qnorm = math.sqrt(sum(w * w for w in qvec.values()))
        if qnorm == 0.0 or self._norms[i] == 0.0:
            return 0.0
        dot = sum(w * self._vectors[i].get(t, 0.0) for t, w in qvec.items())
        return dot / (qnorm * self._norms[i])

    def save(self, path: str | Path) -> None:
        payload = {"sentences": [[sid, text] for sid, text in self.sentences],
                   "term_stats": self.term_stats}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeIndex":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"index file: invalid JSON: {exc.msg}") from exc
        if "sentences" not in payload:
            raise SchemaError("index file: missing field sentences")
        index = cls([(sid, text) for sid, text in payload["sentences"]])
        stored = payload.get("term_stats")
        if stored is not None and stored != index.term_stats:
            raise SchemaError("index file: term_stats inconsistent with sentences")
        return index


def build_index(sentences: Sequence[tuple[str, str]]) -> KnowledgeIndex:
    return KnowledgeIndex(sentences)


def retrieve_top_k(index: KnowledgeIndex, context: Sequence[str], k: int,
                   context_mode: str = "all") -> list[RetrievalResult]:
    """Top-k sentences by tf-idf cosine against the context.

    Results are sorted by descending score with sentence_id breaking ties; a
    k larger than the index returns everything.
    """
    if k < 1:
        raise FactkitError("k must be >= 1")
    if context_mode not in CONTEXT_MODES:
        raise FactkitError(f"context_mode must be one of {CONTEXT_MODES}")
    if context_mode == "last":
        query_text = context[-1] if context else ""
    else:
        query_text = " ".join(context)
    query_terms = _terms(query_text)
    scored = [(index.score(query_terms, i), sid, text)
              for i, (sid, text) in enumerate(index.sentences)]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [RetrievalResult(sid, text, score) for score, sid, text in scored[:k]]


class HttpRetriever:
    """Client for an external retriever speaking the RetrievalResult schema.

    POST {"context": [...], "k": n} -> [{"sentence_id", "text", "score"}, ...]
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def retrieve_top_k(self, context: Sequence[str], k: int) -> list[RetrievalResult]:
        body = json.dumps({"context": list(context), "k": k}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=body,
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"retriever returned HTTP {exc.code}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(f"retriever unreachable: {exc}") from exc
        try:
            payload = json.loads(raw.decode("utf-8"))
            return [RetrievalResult(str(r["sentence_id"]), str(r["text"]),
                                    float(r["score"])) for r in payload]
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportError(f"retriever response unparseable: {exc}") from exc


def index_from_datapoints(pairs: Iterable[tuple[str, str]]) -> KnowledgeIndex:
    """Convenience: build an index over unique (source_id, knowledge) pairs."""
    seen: set[str] = set()
    unique: list[tuple[str, str]] = []
    for sid, text in pairs:
        if sid not in seen:
            seen.add(sid)
            unique.append((sid, text))
    return KnowledgeIndex(unique)
