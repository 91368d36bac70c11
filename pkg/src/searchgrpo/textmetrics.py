"""Text normalization, token-level F1 / exact match, and Hit@k relevance scoring.

Two normalization modes exist. ``answer`` follows the usual SQuAD-style
recipe (lowercase, drop punctuation, drop the articles a/an/the). ``query``
keeps articles, which matters when comparing short sub-queries.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

ARTICLES = frozenset({"a", "an", "the"})
DEFAULT_CUTOFFS = (1, 3, 5)


@dataclass(frozen=True)
class TokenBag:
    tokens: tuple[str, ...]
    counts: Counter = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "counts", Counter(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __bool__(self) -> bool:
        return bool(self.tokens)


@dataclass(frozen=True)
class RelevanceLabels:
    """0-based ranks (within a ranked list) that hold a pseudo-relevant document."""

    relevant_positions: frozenset[int]
    source: str = "gold-answer-containment"

    def __init__(self, relevant_positions: Iterable[int] = (), source: str = "gold-answer-containment"):
        positions = frozenset(int(p) for p in relevant_positions)
        if any(p < 0 for p in positions):
            raise ValueError(f"negative relevant position in {sorted(positions)}")
        object.__setattr__(self, "relevant_positions", positions)
        object.__setattr__(self, "source", source)

    def validate(self, ranking_len: int) -> None:
        bad = [p for p in self.relevant_positions if p >= ranking_len]
        if bad:
            raise ValueError(f"relevant positions {sorted(bad)} outside a list of length {ranking_len}")


def _strip_punctuation(text: str) -> str:
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize(text: str, mode: str = "answer") -> TokenBag:
    if mode not in ("answer", "query"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    tokens = _strip_punctuation(text.lower()).split()
    if mode == "answer":
        tokens = [t for t in tokens if t not in ARTICLES]
    return TokenBag(tuple(tokens))


def token_f1(a: TokenBag, b: TokenBag) -> float:
    """Multiset token F1; symmetric, 0 when either bag is empty."""
    if not a or not b:
        return 0.0
    overlap = sum((a.counts & b.counts).values())
    if overlap == 0:
        return 0.0
    # 2PR/(P+R) == 2*overlap/(|a|+|b|); the single division keeps exact
    # ratios such as 0.8 bit-identical to the threshold literal.
    return 2 * overlap / (len(a) + len(b))


def exact_match(pred: str, gold_list: Sequence[str]) -> int:
    p = normalize(pred, "answer").tokens
    return int(any(p == normalize(g, "answer").tokens for g in gold_list))


def answer_f1(pred: str, gold_list: Sequence[str]) -> float:
    """Best token F1 of ``pred`` against any accepted gold alias."""
    p = normalize(pred, "answer")
    return max((token_f1(p, normalize(g, "answer")) for g in gold_list), default=0.0)


def _contains_run(haystack: tuple[str, ...], needle: tuple[str, ...]) -> bool:
    n = len(needle)
    if n == 0 or n > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - n + 1):
        if haystack[i] == first and haystack[i : i + n] == needle:
            return True
    return False


def contains_answer(doc_text: str, gold_list: Sequence[str]) -> bool:
    """True iff some alias appears as a contiguous run of normalized document tokens.

    Token matching (rather than substring search) keeps "art" from matching
    "Martha".
    """
    doc = normalize(doc_text, "answer").tokens
    return any(_contains_run(doc, normalize(g, "answer").tokens) for g in gold_list)


def hit_at_k(ranking_len: int, labels: RelevanceLabels, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not labels.relevant_positions:
        return 0
    return int(min(labels.relevant_positions) < min(k, ranking_len))


def relevance_reward(
    ranking_len: int, labels: RelevanceLabels, cutoffs: Iterable[int] = DEFAULT_CUTOFFS
) -> float:
    """Mean of Hit@k over the cutoff set."""
    cutoffs = sorted(set(cutoffs))
    if not cutoffs:
        raise ValueError("cutoffs must be non-empty")
    return sum(hit_at_k(ranking_len, labels, k) for k in cutoffs) / len(cutoffs)
