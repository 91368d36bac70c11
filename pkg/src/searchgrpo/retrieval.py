"""First-stage retrieval, candidate annotation, oracle promotion and the two-stage ranker step."""

from __future__ import annotations

import enum
import heapq
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Protocol, Sequence

from . import protocol
from ._http import post_json
from .errors import DataError, TransportError
from .protocol import FormatFlag
from .textmetrics import contains_answer, normalize

logger = logging.getLogger(__name__)

DEFAULT_N = 50
DEFAULT_K = 5


class Document(NamedTuple):
    doc_id: str
    title: str
    text: str

    def to_dict(self) -> dict:
        return {"id": self.doc_id, "title": self.title, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        return cls(str(d.get("id", d.get("doc_id"))), d.get("title", ""), d["text"])


class Provenance(str, enum.Enum):
    RANKER = "ranker"
    RETRIEVER_TOPK = "retriever-topk"
    ORACLE = "oracle"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class CandidateSet:
    sub_query: str
    docs: tuple[Document, ...] = ()
    scores: tuple[float, ...] = ()
    d_plus: tuple[int, ...] = ()
    annotated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(Document(*d) for d in self.docs))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        object.__setattr__(self, "d_plus", tuple(self.d_plus))
        if len(self.docs) != len(self.scores):
            raise DataError(f"{len(self.docs)} docs but {len(self.scores)} scores")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise DataError("candidate scores must be non-increasing")
        if any(a >= b for a, b in zip(self.d_plus, self.d_plus[1:])):
            raise DataError(f"d_plus positions must be strictly increasing: {self.d_plus}")
        if self.d_plus and not 0 <= self.d_plus[0] <= self.d_plus[-1] < len(self.docs):
            raise DataError(f"d_plus positions {self.d_plus} out of range for {len(self.docs)} docs")

    @property
    def i_ans(self) -> int:
        return int(bool(self.d_plus))

    def __len__(self) -> int:
        return len(self.docs)

    def to_dict(self) -> dict:
        return {
            "sub_query": self.sub_query,
            "docs": [d.to_dict() for d in self.docs],
            "scores": list(self.scores),
            "d_plus": list(self.d_plus),
            "i_ans": self.i_ans,
            "annotated": self.annotated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        return cls(
            d["sub_query"],
            tuple(Document.from_dict(x) for x in d["docs"]),
            tuple(d["scores"]),
            tuple(d.get("d_plus", ())),
            d.get("annotated", False),
        )


@dataclass(frozen=True)
class Observation:
    """Documents shown to the agent; ``positions`` index into the source candidate set."""

    docs: tuple[Document, ...]
    positions: tuple[int, ...]
    provenance: Provenance
    truncated_positives: int = 0

    def to_dict(self) -> dict:
        return {
            "positions": list(self.positions),
            "provenance": self.provenance.value,
            "truncated_positives": self.truncated_positives,
        }

    @classmethod
    def from_dict(cls, d: dict, cands: CandidateSet) -> "Observation":
        positions = tuple(d["positions"])
        return cls(tuple(cands.docs[p] for p in positions), positions, Provenance(d["provenance"]),
                   d.get("truncated_positives", 0))


def observe_positions(cands: CandidateSet, positions: Sequence[int], provenance: Provenance,
                      truncated_positives: int = 0) -> Observation:
    positions = tuple(positions)
    if len(set(positions)) != len(positions):
        raise DataError(f"duplicate positions in observation: {positions}")
    return Observation(tuple(cands.docs[p] for p in positions), positions, Provenance(provenance),
                       truncated_positives)


# ---------------------------------------------------------------------------
# Lexical index
# ---------------------------------------------------------------------------


def _doc_tokens(doc: Document) -> tuple[str, ...]:
    return normalize(f"{doc.title} {doc.text}", "query").tokens


class Index:
    """Immutable in-memory inverted index scored with Okapi BM25.

    IDF uses the non-negative form ``log(1 + (N - df + 0.5) / (df + 0.5))``.
    """

    def __init__(self, docs: Sequence[Document], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self._docs = tuple(docs)
        postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        lengths = []
        for i, doc in enumerate(self._docs):
            toks = _doc_tokens(doc)
            lengths.append(len(toks))
            for term, tf in Counter(toks).items():
                postings[term].append((i, tf))
        self._postings = {t: tuple(p) for t, p in postings.items()}
        self._lengths = tuple(lengths)
        self._avgdl = (sum(lengths) / len(lengths)) if lengths else 0.0

    def __len__(self) -> int:
        return len(self._docs)

    @property
    def docs(self) -> tuple[Document, ...]:
        return self._docs

    @property
    def vocabulary_size(self) -> int:
        return len(self._postings)

    def idf(self, term: str) -> float:
        df = len(self._postings.get(term, ()))
        return math.log(1.0 + (len(self._docs) - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        """BM25 score of every document sharing at least one query term."""
        acc: dict[int, float] = defaultdict(float)
        k1, b, avgdl = self.k1, self.b, self._avgdl
        for term, qtf in sorted(Counter(normalize(query, "query").tokens).items()):
            plist = self._postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for i, tf in plist:
                norm = k1 * (1.0 - b + b * self._lengths[i] / avgdl)
                acc[i] += qtf * idf * tf * (k1 + 1.0) / (tf + norm)
        return dict(acc)

    def retrieve(self, query: str, n: int = DEFAULT_N) -> CandidateSet:
        return retrieve(self, query, n)


def build_index(corpus: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> Index:
    docs = []
    seen: set[str] = set()
    for doc in corpus:
        doc = Document(*doc)
        if doc.doc_id in seen:
            raise DataError(f"duplicate doc_id {doc.doc_id!r} in corpus")
        seen.add(doc.doc_id)
        docs.append(doc)
    return Index(docs, k1=k1, b=b)


def iter_corpus(path: str | Path) -> Iterator[Document]:
    """Stream ``{"id", "title", "text"}`` records from a JSON-lines file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(rec, dict) or "id" not in rec or not isinstance(rec.get("text"), str):
                raise DataError(f"{path}:{lineno}: expected an object with 'id' and string 'text'")
            yield Document(str(rec["id"]), str(rec.get("title", "")), rec["text"])


def retrieve(index: Index, query: str, n: int = DEFAULT_N) -> CandidateSet:
    """Top-``n`` documents by BM25; ties go to the smaller doc_id."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    scored = index.scores(query)
    docs = index.docs
    top = heapq.nsmallest(n, scored.items(), key=lambda kv: (-kv[1], docs[kv[0]].doc_id))
    return CandidateSet(query, tuple(docs[i] for i, _ in top), tuple(s for _, s in top))


class Retriever(Protocol):
    def retrieve(self, query: str, n: int) -> CandidateSet: ...


# ---------------------------------------------------------------------------
# Remote first-stage retriever
# ---------------------------------------------------------------------------


@dataclass
class RemoteRetriever:
    """Client for a dense-retrieval service speaking ``{query, n}`` -> ``[{doc_id, title, text, score}]``."""

    endpoint: str
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5

    def retrieve(self, query: str, n: int = DEFAULT_N) -> CandidateSet:
        payload = post_json(self.endpoint, {"query": query, "n": n}, timeout=self.timeout,
                            max_retries=self.max_retries, backoff=self.backoff)
        return _candidates_from_payload(query, payload, n, self.endpoint)


def remote_retrieve(endpoint: str, query: str, n: int = DEFAULT_N, **kwargs) -> CandidateSet:
    return RemoteRetriever(endpoint, **kwargs).retrieve(query, n)


def _candidates_from_payload(query: str, payload, n: int, endpoint: str) -> CandidateSet:
    if isinstance(payload, dict) and "results" in payload:
        payload = payload["results"]
    if not isinstance(payload, list):
        raise TransportError(f"{endpoint}: expected a JSON list of results", retryable=False)
    rows = []
    for i, item in enumerate(payload):
        try:
            doc = Document(str(item["doc_id"]), str(item.get("title", "")), str(item["text"]))
            score = float(item["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"{endpoint}: malformed result #{i}: {exc!r}", retryable=False) from exc
        if math.isnan(score):
            raise TransportError(f"{endpoint}: result #{i} has a NaN score", retryable=False)
        rows.append((doc, score))
    if any(a[1] < b[1] for a, b in zip(rows, rows[1:])):
        logger.warning("%s returned scores out of order for %r; re-sorting", endpoint, query)
        rows.sort(key=lambda r: (-r[1], r[0].doc_id))
    ids = [d.doc_id for d, _ in rows]
    if len(set(ids)) != len(ids):
        raise TransportError(f"{endpoint}: duplicate doc_id in results", retryable=False)
    rows = rows[:n]
    return CandidateSet(query, tuple(d for d, _ in rows), tuple(s for _, s in rows))


# ---------------------------------------------------------------------------
# Annotation and observation construction
# ---------------------------------------------------------------------------


def annotate(cands: CandidateSet, gold_list: Sequence[str]) -> CandidateSet:
    d_plus = tuple(i for i, d in enumerate(cands.docs) if contains_answer(f"{d.title} {d.text}", gold_list))
    return replace(cands, d_plus=d_plus, annotated=True)


def topk_observe(cands: CandidateSet, k: int, provenance: Provenance = Provenance.RETRIEVER_TOPK) -> Observation:
    return observe_positions(cands, range(min(k, len(cands))), provenance)


def oracle_observe(cands: CandidateSet, k: int) -> Observation:
    """Promote answer-bearing candidates to the front, then fill with the best of the rest.

    Relative order inside both parts follows the retriever. When more than
    ``k`` candidates carry the answer the list is truncated and the number
    dropped is recorded.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not cands.annotated:
        raise DataError("oracle_observe needs an annotated candidate set")
    if not cands.d_plus:
        return topk_observe(cands, k, Provenance.ORACLE)
    positives = list(cands.d_plus)
    dropped = max(0, len(positives) - k)
    chosen = positives[:k]
    plus = set(positives)
    rest = (i for i in range(len(cands)) if i not in plus)
    while len(chosen) < k:
        nxt = next(rest, None)
        if nxt is None:
            break
        chosen.append(nxt)
    return observe_positions(cands, chosen, Provenance.ORACLE, truncated_positives=dropped)


@dataclass
class RankerCall:
    """One generative-ranker invocation: the unit of ranker GRPO training."""

    call_id: str
    q0: str
    sub_query: str
    candidates: CandidateSet
    k: int
    prompt: str
    response: str
    ranking: Optional[tuple[int, ...]]
    flag: FormatFlag
    trajectory_id: str = ""
    question_id: str = ""
    rollout_index: int = 0
    step: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def i_ans(self) -> int:
        return self.candidates.i_ans

    def output_positions(self) -> tuple[int, ...]:
        """0-based candidate positions in the ranker's output order (empty on f=0)."""
        return tuple(i - 1 for i in self.ranking) if self.ranking else ()

    def to_dict(self) -> dict:
        return {
            "call_id": self.call_id,
            "question_id": self.question_id,
            "trajectory_id": self.trajectory_id,
            "rollout_index": self.rollout_index,
            "step": self.step,
            "q0": self.q0,
            "sub_query": self.sub_query,
            "k": self.k,
            "candidates": self.candidates.to_dict(),
            "prompt": self.prompt,
            "response": self.response,
            "ranking": list(self.ranking) if self.ranking is not None else None,
            "format": self.flag.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RankerCall":
        return cls(
            call_id=d["call_id"],
            q0=d["q0"],
            sub_query=d["sub_query"],
            candidates=CandidateSet.from_dict(d["candidates"]),
            k=d["k"],
            prompt=d["prompt"],
            response=d["response"],
            ranking=tuple(d["ranking"]) if d.get("ranking") is not None else None,
            flag=FormatFlag.from_dict(d["format"]),
            trajectory_id=d.get("trajectory_id", ""),
            question_id=d.get("question_id", ""),
            rollout_index=d.get("rollout_index", 0),
            step=d.get("step", 0),
        )


def rank_candidates(q0: str, cands: CandidateSet, ranker, k: int, *, seed: Optional[int] = None,
                    **call_fields) -> tuple[Observation, Optional[RankerCall]]:
    """Run the generative ranker over an existing candidate set.

    A malformed ranker reply falls back to the retriever's top-k for the
    observation, and the call keeps ``f = 0``. An empty candidate set skips
    the ranker and returns no call.
    """
    if not len(cands):
        return Observation((), (), Provenance.FALLBACK), None
    k_eff = min(k, len(cands))
    prompt = protocol.render_ranker_prompt(q0, cands.sub_query, cands.docs, k_eff)
    response = ranker.generate([{"role": "user", "content": prompt}], seed=seed)
    turn, flag = protocol.parse_ranker_turn(response, len(cands), k_eff)
    call = RankerCall(
        call_id=call_fields.pop("call_id", ""),
        q0=q0,
        sub_query=cands.sub_query,
        candidates=cands,
        k=k_eff,
        prompt=prompt,
        response=response,
        ranking=turn.ranking if turn else None,
        flag=flag,
        **call_fields,
    )
    if flag.f == 1:
        return observe_positions(cands, call.output_positions(), Provenance.RANKER), call
    return topk_observe(cands, k_eff, Provenance.FALLBACK), call


def two_stage_observe(q0: str, qt: str, retriever: Retriever, ranker, n: int = DEFAULT_N, k: int = DEFAULT_K,
                      gold_list: Sequence[str] = (), **call_fields) -> tuple[Observation, Optional[RankerCall]]:
    """Retrieve ``n`` candidates, annotate them, and let the ranker pick ``k``."""
    if n < k:
        raise ValueError(f"n={n} must be >= k={k}")
    cands = annotate(retriever.retrieve(qt, n), gold_list)
    return rank_candidates(q0, cands, ranker, k, **call_fields)
