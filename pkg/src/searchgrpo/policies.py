"""Text-generating policies: table-driven scripts and a chat-completions client.

A policy is anything with ``generate(messages, seed=None) -> str``. Transport
problems raise :class:`~searchgrpo.errors.TransportError`; they are never
turned into format violations.
"""

from __future__ import annotations

import inspect
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

from ._http import post_json
from .errors import DataError, TransportError

Messages = list[dict]
TurnEntry = Union[str, Callable[..., str]]

DEFAULT_API_KEY_ENV = "SEARCHGRPO_API_KEY"


class Policy(Protocol):
    kind: str

    def generate(self, messages: Messages, seed: Optional[int] = None) -> str: ...


def _call_entry(entry: TurnEntry, messages: Messages, seed: Optional[int]) -> str:
    if isinstance(entry, str):
        return entry
    params = inspect.signature(entry).parameters
    if "seed" in params:
        return entry(messages, seed=seed)
    return entry(messages)


@dataclass
class ScriptedPolicy:
    """Turn table: entry ``i`` answers the ``i``-th assistant turn of a conversation.

    Entries are literal strings or callables ``fn(messages[, seed])``. Past
    the end of the table the last entry repeats, so a one-entry table acts
    as a constant policy (handy for single-turn ranker calls).
    """

    turns: Sequence[TurnEntry]
    name: str = "scripted"
    kind: str = field(default="scripted", init=False)

    def __post_init__(self):
        if not self.turns:
            raise ValueError("scripted policy needs at least one turn")

    def generate(self, messages: Messages, seed: Optional[int] = None) -> str:
        turn = sum(1 for m in messages if m.get("role") == "assistant")
        entry = self.turns[min(turn, len(self.turns) - 1)]
        return _call_entry(entry, messages, seed)


@dataclass
class RemoteChatPolicy:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    ``endpoint`` is the API base (e.g. ``http://host:8000/v1``). The bearer
    token, if any, is read from the environment variable ``api_key_env``.
    """

    endpoint: str
    model: str
    temperature: float = 1.0
    max_tokens: Optional[int] = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    kind: str = field(default="remote-chat", init=False)

    @property
    def url(self) -> str:
        base = self.endpoint.rstrip("/")
        return base if base.endswith("/chat/completions") else f"{base}/chat/completions"

    def generate(self, messages: Messages, seed: Optional[int] = None) -> str:
        return remote_chat_generate(self, messages, seed=seed)


def remote_chat_generate(policy: RemoteChatPolicy, messages: Messages, seed: Optional[int] = None) -> str:
    payload: dict = {"model": policy.model, "messages": messages, "temperature": policy.temperature}
    if policy.max_tokens is not None:
        payload["max_tokens"] = policy.max_tokens
    if seed is not None:
        payload["seed"] = seed
    headers = {}
    key = os.environ.get(policy.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = post_json(policy.url, payload, headers=headers, timeout=policy.timeout,
                     max_retries=policy.max_retries, backoff=policy.backoff,
                     auth_env_var=policy.api_key_env)
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"{policy.url}: malformed completion payload ({exc!r})", retryable=False) from exc
    if not isinstance(content, str) or not content.strip():
        raise TransportError(f"{policy.url}: completion has empty content", retryable=False)
    return content


# ---------------------------------------------------------------------------
# Reusable scripted behaviours
# ---------------------------------------------------------------------------

_TOOL_RESPONSE = re.compile(r"<tool_response>(.*?)</tool_response>", re.S)
_DOC_HEAD = re.compile(r'^\[(\d+)\] "(.*)"$', re.M)


def search_turn(query: str, reason: str = "Searching for evidence.") -> str:
    payload = json.dumps({"name": "search", "arguments": {"query": query}}, ensure_ascii=False)
    return f"<reason>{reason}</reason>\n<tool_call>{payload}</tool_call>"


def answer_turn(answer: str, reason: str = "The evidence is sufficient.") -> str:
    return f"<reason>{reason}</reason>\n<answer>{answer}</answer>"


def ranker_turn(indices: Sequence[int], reason: str = "Ranked by relevance.") -> str:
    ranked = " > ".join(f"[{i}]" for i in indices)
    return f"<reason>{reason}</reason>\n<rerank>{ranked}</rerank>"


def last_observation(messages: Messages) -> list[tuple[str, str]]:
    """``(title, text)`` pairs from the most recent ``<tool_response>`` message."""
    for m in reversed(messages):
        found = _TOOL_RESPONSE.search(m.get("content", "")) if m.get("role") != "assistant" else None
        if found:
            body = found.group(1)
            heads = list(_DOC_HEAD.finditer(body))
            docs = []
            for h, nxt in zip(heads, heads[1:] + [None]):
                end = nxt.start() if nxt else len(body)
                docs.append((h.group(2), body[h.end() : end].strip()))
            return docs
    return []


def question_of(messages: Messages) -> str:
    first = messages[0]["content"] if messages else ""
    marker = "\nQuestion: "
    return first[first.rfind(marker) + len(marker) :] if marker in first else first


def identity_ranker(messages: Messages) -> str:
    """Keep the retriever's order: emit ``[1] > ... > [K]``."""
    prompt = messages[-1]["content"]
    k = int(re.search(r"Number of documents to select \(K\): (\d+)", prompt).group(1))
    return ranker_turn(range(1, k + 1), "Retriever order kept.")


def answer_from_top_document(pattern: str) -> Callable[[Messages], str]:
    """Answer with the first regex group of ``pattern`` matched in the top observed document."""
    rx = re.compile(pattern)

    def turn(messages: Messages) -> str:
        docs = last_observation(messages)
        match = rx.search(docs[0][1]) if docs else None
        return answer_turn(match.group(1) if match else "unknown", "Answer read from the top document.")

    return turn


def load_scripted_policy(path: str | Path) -> ScriptedPolicy:
    """Load ``{"turns": [...]}`` where each entry is literal text or ``{"builtin": name, ...}``."""
    try:
        table = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read scripted policy {path}: {exc}") from exc
    turns = []
    for entry in table.get("turns", []):
        if isinstance(entry, str):
            turns.append(entry)
        elif isinstance(entry, dict) and entry.get("builtin") == "identity-ranker":
            turns.append(identity_ranker)
        elif isinstance(entry, dict) and entry.get("builtin") == "search-question":
            turns.append(lambda messages: search_turn(question_of(messages)))
        elif isinstance(entry, dict) and entry.get("builtin") == "answer-from-top":
            turns.append(answer_from_top_document(entry["pattern"]))
        else:
            raise DataError(f"{path}: unsupported scripted turn {entry!r}")
    if not turns:
        raise DataError(f"{path}: scripted policy has no turns")
    return ScriptedPolicy(turns, name=Path(path).stem)
