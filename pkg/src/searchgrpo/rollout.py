"""Multi-turn search rollouts over pluggable policies.

A trajectory alternates main-agent turns with observations until the agent
answers. The observation for each search depends on the mode:

* ``standard``: the configured retrieval system. Two-stage with the ranker
  when one is given, otherwise the retriever's top-k.
* ``retrieval-only``: the retriever's top-k, never a ranker.
* ``oracle``: answer-bearing candidates promoted to the top.
* ``ranker`` / ``fixed-ranker``: two-stage retrieval through the ranker
  policy. The two differ only in how the ranker is later trained.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from . import protocol
from .errors import DataError, TransportError
from .protocol import Answer, FormatFlag, Violation
from .retrieval import (
    DEFAULT_K,
    DEFAULT_N,
    CandidateSet,
    Observation,
    RankerCall,
    Retriever,
    annotate,
    oracle_observe,
    rank_candidates,
    topk_observe,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "trajectory-v1"
DEFAULT_BUDGET = 6
DEFAULT_G = 8


class Mode(str, enum.Enum):
    STANDARD = "standard"
    RETRIEVAL_ONLY = "retrieval-only"
    ORACLE = "oracle"
    RANKER = "ranker"
    FIXED_RANKER = "fixed-ranker"


class Termination(str, enum.Enum):
    ANSWER = "answer"
    FORCED_ANSWER = "forced-answer"
    FORCED_ANSWER_FAILED = "forced-answer-failed"
    FORMAT_VIOLATION = "format-violation"


@dataclass(frozen=True)
class Limits:
    budget: int = DEFAULT_BUDGET
    n: int = DEFAULT_N
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if not self.n >= self.k >= 1:
            raise ValueError(f"need N >= K >= 1, got N={self.n} K={self.k}")


@dataclass(frozen=True)
class Question:
    qid: str
    question: str
    golden_answers: tuple[str, ...]
    dataset: str = "default"


def iter_questions(path: str | Path) -> Iterator[Question]:
    """Read ``{"id", "question", "golden_answers", ["dataset"]}`` JSON lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                answers = rec["golden_answers"]
                if isinstance(answers, str):
                    answers = [answers]
                yield Question(str(rec["id"]), rec["question"], tuple(answers), rec.get("dataset", "default"))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad question record ({exc!r})") from exc


@dataclass
class Step:
    index: int
    thought: str
    sub_query: str
    candidates: CandidateSet
    observation: Observation
    ranker_call: Optional[RankerCall] = None

    @property
    def ranker_call_id(self) -> Optional[str]:
        return self.ranker_call.call_id if self.ranker_call else None

    def to_dict(self) -> dict:
        call = None
        if self.ranker_call is not None:
            call = self.ranker_call.to_dict()
            del call["candidates"]
        return {
            "index": self.index,
            "thought": self.thought,
            "sub_query": self.sub_query,
            "candidates": self.candidates.to_dict(),
            "observation": self.observation.to_dict(),
            "ranker_call": call,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        cands = CandidateSet.from_dict(d["candidates"])
        call = None
        if d.get("ranker_call"):
            call = RankerCall.from_dict({**d["ranker_call"], "candidates": d["candidates"]})
        return cls(d["index"], d["thought"], d["sub_query"], cands, Observation.from_dict(d["observation"], cands), call)


@dataclass
class Trajectory:
    question: Question
    rollout_index: int
    mode: Mode
    steps: list[Step] = field(default_factory=list)
    final_thought: Optional[str] = None
    answer: Optional[str] = None
    flag: FormatFlag = field(default_factory=FormatFlag.ok)
    termination: Termination = Termination.ANSWER
    turns: list[str] = field(default_factory=list)
    batch_index: int = 0
    seed: Optional[int] = None
    rewards: Optional[dict] = None
    config_hash: Optional[str] = None

    @property
    def trajectory_id(self) -> str:
        return f"{self.question.qid}/r{self.rollout_index}"

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def ranker_calls(self) -> list[RankerCall]:
        return [s.ranker_call for s in self.steps if s.ranker_call is not None]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "template_version": protocol.TEMPLATE_VERSION,
            "trajectory_id": self.trajectory_id,
            "question_id": self.question.qid,
            "question": self.question.question,
            "golden_answers": list(self.question.golden_answers),
            "dataset": self.question.dataset,
            "rollout_index": self.rollout_index,
            "batch_index": self.batch_index,
            "seed": self.seed,
            "mode": self.mode.value,
            "steps": [s.to_dict() for s in self.steps],
            "final_thought": self.final_thought,
            "answer": self.answer,
            "format": self.flag.to_dict(),
            "termination": self.termination.value,
            "turns": list(self.turns),
            "rewards": self.rewards,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported trajectory schema {d.get('schema_version')!r}")
        q = Question(d["question_id"], d["question"], tuple(d["golden_answers"]), d.get("dataset", "default"))
        return cls(
            question=q,
            rollout_index=d["rollout_index"],
            mode=Mode(d["mode"]),
            steps=[Step.from_dict(s) for s in d["steps"]],
            final_thought=d.get("final_thought"),
            answer=d.get("answer"),
            flag=FormatFlag.from_dict(d["format"]),
            termination=Termination(d["termination"]),
            turns=list(d.get("turns", [])),
            batch_index=d.get("batch_index", 0),
            seed=d.get("seed"),
            rewards=d.get("rewards"),
            config_hash=d.get("config_hash"),
        )


def render_observation(obs: Observation) -> str:
    return f"<tool_response>\n{protocol.format_documents(obs.docs)}\n</tool_response>"


def rollout_seed(seed: int, qid: str, rollout_index: int) -> int:
    digest = hashlib.sha256(f"{seed}:{qid}:{rollout_index}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _observe(mode: Mode, question: Question, cands: CandidateSet, ranker, k: int, traj_id: str,
             rollout_index: int, step: int, seed: Optional[int]) -> tuple[Observation, Optional[RankerCall]]:
    use_ranker = mode in (Mode.RANKER, Mode.FIXED_RANKER) or (mode is Mode.STANDARD and ranker is not None)
    if use_ranker:
        return rank_candidates(
            question.question, cands, ranker, k,
            seed=None if seed is None else seed + step,
            call_id=f"{traj_id}/s{step}", trajectory_id=traj_id, question_id=question.qid,
            rollout_index=rollout_index, step=step,
        )
    if mode is Mode.ORACLE:
        return oracle_observe(cands, k), None
    return topk_observe(cands, k), None


def run_trajectory(question: Question, main, retriever: Retriever, mode: Mode | str = Mode.STANDARD,
                   ranker=None, limits: Limits = Limits(), rollout_index: int = 1,
                   seed: Optional[int] = None, batch_index: int = 0) -> Trajectory:
    """Drive one ReAct trajectory to an answer, a format violation, or budget exhaustion.

    When the agent asks for another search after ``limits.budget`` searches,
    the search is not run; the agent gets one instruction to answer now, and
    anything other than a valid answer sets ``f = 0``. Transport errors
    propagate.
    """
    mode = Mode(mode)
    if mode in (Mode.RANKER, Mode.FIXED_RANKER) and ranker is None:
        raise ValueError(f"mode {mode.value!r} needs a ranker policy")
    traj = Trajectory(question, rollout_index, mode, batch_index=batch_index, seed=seed)
    messages = [{"role": "user", "content": protocol.render_main_prompt(question.question)}]
    forced = False
    while True:
        text = main.generate(messages, seed=seed)
        traj.turns.append(text)
        messages.append({"role": "assistant", "content": text})
        turn, flag = protocol.parse_main_turn(text)
        if flag.f == 0:
            traj.flag = flag
            traj.termination = Termination.FORCED_ANSWER_FAILED if forced else Termination.FORMAT_VIOLATION
            return traj
        if isinstance(turn.action, Answer):
            traj.final_thought = turn.reason
            traj.answer = turn.action.text
            traj.termination = Termination.FORCED_ANSWER if forced else Termination.ANSWER
            return traj
        if forced:
            traj.flag = FormatFlag.bad(Violation.MISSING_TAGS)
            traj.termination = Termination.FORCED_ANSWER_FAILED
            return traj
        if traj.m >= limits.budget:
            forced = True
            messages.append({"role": "user", "content": protocol.FORCED_ANSWER_MESSAGE})
            continue
        t = traj.m + 1
        query = turn.action.query
        cands = annotate(retriever.retrieve(query, limits.n), question.golden_answers)
        obs, call = _observe(mode, question, cands, ranker, limits.k, traj.trajectory_id, rollout_index, t, seed)
        traj.steps.append(Step(t, turn.reason, query, cands, obs, call))
        messages.append({"role": "user", "content": render_observation(obs)})


def run_group(question: Question, main, retriever: Retriever, mode: Mode | str = Mode.STANDARD, ranker=None,
              G: int = DEFAULT_G, limits: Limits = Limits(), seed: int = 0, batch_index: int = 0) -> list[Trajectory]:
    """``G`` independent rollouts of one question, indexed 1..G."""
    if G < 1:
        raise ValueError(f"G must be >= 1, got {G}")
    return [
        run_trajectory(question, main, retriever, mode, ranker, limits, i, rollout_seed(seed, question.qid, i),
                       batch_index)
        for i in range(1, G + 1)
    ]


@dataclass
class RolloutFailure:
    question_id: str
    rollout_index: int
    error: str
    attempts: int


@dataclass
class BatchResult:
    trajectories: list[Trajectory]
    failures: list[RolloutFailure]


def run_batch(questions: Sequence[Question], main, retriever: Retriever, mode: Mode | str = Mode.STANDARD,
              ranker=None, G: int = DEFAULT_G, limits: Limits = Limits(), seed: int = 0, workers: int = 1,
              max_attempts: int = 2, batch_index: int = 0) -> BatchResult:
    """Roll out every question ``G`` times with at most ``workers`` concurrent rollouts.

    Output order is (question order, rollout index) whatever the completion
    order. A rollout that keeps failing on transport errors is reported in
    ``failures`` and left out of ``trajectories``.
    """
    jobs = [(q, i) for q in questions for i in range(1, G + 1)]

    def work(job):
        q, i = job
        for attempt in range(1, max_attempts + 1):
            try:
                return run_trajectory(q, main, retriever, mode, ranker, limits, i,
                                      rollout_seed(seed, q.qid, i), batch_index)
            except TransportError as exc:
                logger.warning("rollout %s/r%d attempt %d failed: %s", q.qid, i, attempt, exc)
                if attempt == max_attempts or not exc.retryable:
                    return RolloutFailure(q.qid, i, str(exc), attempt)

    if workers <= 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    return BatchResult(
        [r for r in results if isinstance(r, Trajectory)],
        [r for r in results if isinstance(r, RolloutFailure)],
    )


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    Path(path).write_text(dumps_jsonl(t.to_dict() for t in trajectories), encoding="utf-8")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(Trajectory.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: bad trajectory record ({exc})") from exc
    return out
