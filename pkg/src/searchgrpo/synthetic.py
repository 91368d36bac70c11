"""Planted-answer corpus for offline end-to-end runs.

Each question asks for the seat of a made-up realm. One document states the
true seat. A set of distractor documents repeat the realm's name more often
and name a wrong seat, so the lexical retriever ranks the true document
at a chosen depth (6-15 by default). An agent that answers from the top
observed document is then wrong under plain retrieval and right under
oracle promotion.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .policies import ScriptedPolicy, answer_from_top_document, question_of, search_turn
from .retrieval import Document
from .rollout import Question

ANSWER_PATTERN = r"seat lies in (\w+)"
REFINE_MARKER = "precisely"

_DISTRACTOR_LEN = 20
_SYLLABLES = ["ka", "lo", "mer", "vin", "tas", "rel", "dor", "qui", "zan", "pol", "ur", "bex", "nim", "sod", "fy"]


@dataclass(frozen=True)
class PlantedFixture:
    docs: list[Document]
    questions: list[Question]
    planted_rank: dict[str, int]
    two_search_questions: frozenset[str]


def _words(rng: random.Random, count: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        w = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(3, 4)))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def planted_rank_for(i: int) -> int:
    return 6 + (i % 10) if i < 10 else 6 + (i % 5)


def make_planted_fixture(n_docs: int = 200, n_questions: int = 20, seed: int = 0) -> PlantedFixture:
    """Build the corpus and questions. Question ``i`` has its answer planted at rank
    ``planted_rank_for(i)``; every fourth question asks for a second, refined search."""
    rng = random.Random(seed)
    taken: set[str] = set()
    docs: list[Document] = []
    questions: list[Question] = []
    ranks: dict[str, int] = {}
    twice = set()
    for i in range(n_questions):
        realm, answer = _words(rng, 2, taken)
        depth = planted_rank_for(i)
        qid = f"q{i:02d}"
        marker = f" {REFINE_MARKER}" if i % 4 == 0 else ""
        if marker:
            twice.add(qid)
        questions.append(Question(qid, f"Which city is{marker} the seat of {realm}?", (answer.capitalize(),),
                                  dataset="planted"))
        ranks[qid] = depth
        wrong = _words(rng, depth - 1, taken)
        for j, w in enumerate(wrong):
            # fixed length, so the score grows with the mention count alone
            count = depth - j
            body = " ".join([realm] * count + ["chronicle"] * (_DISTRACTOR_LEN - count))
            docs.append(Document(f"{qid}-d{j:02d}", f"record {j}",
                                 f"{body}. The seat lies in {w.capitalize()}."))
        docs.append(Document(f"{qid}-gold", "survey",
                             f"A long survey across distant lands, old roads and quiet rivers mentions {realm} "
                             f"just once. Survey notes from travellers say the seat lies in {answer.capitalize()}."))
    filler = 0
    while len(docs) < n_docs:
        words = _words(rng, 6, taken)
        docs.append(Document(f"filler-{filler:03d}", words[0], " ".join(words) + "."))
        filler += 1
    return PlantedFixture(docs[:n_docs] if len(docs) > n_docs else docs, questions, ranks, frozenset(twice))


def _second_turn(messages):
    question = question_of(messages)
    if REFINE_MARKER in question.split():
        realm = question.rstrip("?").split()[-1]
        return search_turn(f"seat of {realm}", "Refining the search.")
    return answer_from_top_document(ANSWER_PATTERN)(messages)


def top_document_agent() -> ScriptedPolicy:
    """Search with the question, optionally refine once, answer from the top observed document."""
    return ScriptedPolicy(
        [
            lambda messages: search_turn(question_of(messages)),
            _second_turn,
            answer_from_top_document(ANSWER_PATTERN),
        ],
        name="top-document-agent",
    )
