"""Prompt rendering and strict parsing of agent and ranker turns.

Parsers never raise on model output. Every grammar or schema breach comes
back as a :class:`FormatFlag` with ``f == 0`` and a violation kind, because a
malformed turn is a reward case rather than a crash.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence, Union

MAIN_TEMPLATE_VERSION = "main-v1"
RANKER_TEMPLATE_VERSION = "ranker-v1"
TEMPLATE_VERSION = f"{MAIN_TEMPLATE_VERSION}+{RANKER_TEMPLATE_VERSION}"

FORCED_ANSWER_MESSAGE = (
    "You have reached the maximum number of search calls. "
    "Respond now with <reason> ... </reason> followed by <answer> ... </answer>."
)


class Violation(str, enum.Enum):
    MISSING_TAGS = "missing-tags"
    EXTRA_TEXT = "extra-text"
    BAD_JSON = "bad-json"
    BAD_SCHEMA = "bad-schema"
    DUP_INDEX = "dup-index"
    RANGE_INDEX = "range-index"
    WRONG_COUNT = "wrong-count"


@dataclass(frozen=True)
class FormatFlag:
    f: int
    violation: Optional[Violation] = None

    def __post_init__(self):
        if (self.f == 1) != (self.violation is None):
            raise ValueError(f"inconsistent format flag f={self.f} violation={self.violation}")

    @classmethod
    def ok(cls) -> "FormatFlag":
        return cls(1)

    @classmethod
    def bad(cls, violation: Violation) -> "FormatFlag":
        return cls(0, Violation(violation))

    def to_dict(self) -> dict:
        return {"f": self.f, "violation": self.violation.value if self.violation else None}

    @classmethod
    def from_dict(cls, d: dict) -> "FormatFlag":
        v = d.get("violation")
        return cls(int(d["f"]), Violation(v) if v else None)


@dataclass(frozen=True)
class ToolCall:
    query: str


@dataclass(frozen=True)
class Answer:
    text: str


@dataclass(frozen=True)
class MainTurn:
    reason: str
    action: Union[ToolCall, Answer]


@dataclass(frozen=True)
class RankerTurn:
    reason: str
    ranking: tuple[int, ...]


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    text = resources.files("searchgrpo").joinpath("templates", f"{name}.txt").read_text("utf-8")
    return text.rstrip("\n")


def render_main_prompt(question: str) -> str:
    if not question or not question.strip():
        raise ValueError("empty question")
    return load_template("main_v1").replace("{question}", question)


def format_documents(docs: Sequence) -> str:
    """``[i] "title"`` followed by the passage text, one candidate per block."""
    blocks = []
    for i, (_, title, text) in enumerate(docs, start=1):
        blocks.append(f'[{i}] "{title}"\n{text}')
    return "\n".join(blocks)


def render_ranker_prompt(q0: str, qt: str, docs: Sequence, k: int) -> str:
    if not docs:
        raise ValueError("ranker prompt needs at least one candidate document")
    if not 1 <= k <= len(docs):
        raise ValueError(f"K={k} must lie in [1, {len(docs)}] (number of candidates)")
    # str.replace rather than str.format: document text may hold braces.
    out = load_template("ranker_v1")
    out = out.replace("{original_question}", q0).replace("{sub_query}", qt)
    out = out.replace("{k}", str(k))
    return out.replace("{documents}", format_documents(docs))


def render_main_turn(turn: MainTurn) -> str:
    if isinstance(turn.action, ToolCall):
        payload = json.dumps({"name": "search", "arguments": {"query": turn.action.query}}, ensure_ascii=False)
        return f"<reason>{turn.reason}</reason>\n<tool_call>{payload}</tool_call>"
    return f"<reason>{turn.reason}</reason>\n<answer>{turn.action.text}</answer>"


def render_ranker_turn(turn: RankerTurn) -> str:
    ranked = " > ".join(f"[{i}]" for i in turn.ranking)
    return f"<reason>{turn.reason}</reason>\n<rerank>{ranked}</rerank>"


_TAG = re.compile(r"</?(reason|tool_call|answer|rerank|tool_response)\s*>")
_INDEX_LIST = re.compile(r"\s*\[\s*(\d+)\s*\](?:\s*>\s*\[\s*\d+\s*\])*\s*")
_INDEX = re.compile(r"\[\s*(\d+)\s*\]")


def _split_blocks(text: str, allowed_actions: tuple[str, ...]):
    """Return ``(reason, action_tag, action_body)`` or a violation.

    The tag sequence must be exactly reason-open, reason-close, action-open,
    action-close; only whitespace may sit between or around the blocks.
    """
    tags = list(_TAG.finditer(text))
    names = [(m.group(0).startswith("</"), m.group(1)) for m in tags]
    if len(tags) != 4 or names[0] != (False, "reason") or names[1] != (True, "reason"):
        return Violation.MISSING_TAGS
    action = names[2][1]
    if action not in allowed_actions or names[2] != (False, action) or names[3] != (True, action):
        return Violation.MISSING_TAGS
    gaps = (
        text[: tags[0].start()],
        text[tags[1].end() : tags[2].start()],
        text[tags[3].end() :],
    )
    if any(g.strip() for g in gaps):
        return Violation.EXTRA_TEXT
    reason = text[tags[0].end() : tags[1].start()]
    body = text[tags[2].end() : tags[3].start()]
    return reason.strip(), action, body


def _no_duplicate_keys(pairs):
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        raise _SchemaError(f"duplicate keys {keys}")
    return dict(pairs)


class _SchemaError(ValueError):
    pass


def _parse_tool_json(body: str) -> Union[ToolCall, Violation]:
    try:
        obj = json.loads(body, object_pairs_hook=_no_duplicate_keys)
    except _SchemaError:
        return Violation.BAD_SCHEMA
    except ValueError:
        return Violation.BAD_JSON
    if not isinstance(obj, dict) or set(obj) != {"name", "arguments"}:
        return Violation.BAD_SCHEMA
    args = obj["arguments"]
    if obj["name"] != "search" or not isinstance(args, dict) or set(args) != {"query"}:
        return Violation.BAD_SCHEMA
    query = args["query"]
    if not isinstance(query, str) or not query.strip():
        return Violation.BAD_SCHEMA
    return ToolCall(query)


def parse_main_turn(text: str) -> tuple[Optional[MainTurn], FormatFlag]:
    parts = _split_blocks(text, ("tool_call", "answer"))
    if isinstance(parts, Violation):
        return None, FormatFlag.bad(parts)
    reason, action, body = parts
    if action == "answer":
        return MainTurn(reason, Answer(body.strip())), FormatFlag.ok()
    call = _parse_tool_json(body)
    if isinstance(call, Violation):
        return None, FormatFlag.bad(call)
    return MainTurn(reason, call), FormatFlag.ok()


def parse_ranker_turn(text: str, n: int, k: int) -> tuple[Optional[RankerTurn], FormatFlag]:
    if not n >= k >= 1:
        raise ValueError(f"need N >= K >= 1, got N={n} K={k}")
    parts = _split_blocks(text, ("rerank",))
    if isinstance(parts, Violation):
        return None, FormatFlag.bad(parts)
    reason, _, body = parts
    if not body.strip():
        return None, FormatFlag.bad(Violation.WRONG_COUNT)
    if not _INDEX_LIST.fullmatch(body):
        return None, FormatFlag.bad(Violation.EXTRA_TEXT)
    ranking = tuple(int(m.group(1)) for m in _INDEX.finditer(body))
    if any(not 1 <= i <= n for i in ranking):
        return None, FormatFlag.bad(Violation.RANGE_INDEX)
    if len(set(ranking)) != len(ranking):
        return None, FormatFlag.bad(Violation.DUP_INDEX)
    if len(ranking) != k:
        return None, FormatFlag.bad(Violation.WRONG_COUNT)
    return RankerTurn(reason, ranking), FormatFlag.ok()
