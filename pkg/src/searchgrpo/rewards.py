"""Main-agent reward, composite ranker reward, and pre-training trajectory filtering."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import ConsistencyError
from .retrieval import RankerCall
from .rollout import Trajectory
from .textmetrics import DEFAULT_CUTOFFS, RelevanceLabels, answer_f1, relevance_reward

DEFAULT_ALPHA = 0.2
DEFAULT_GAMMA = 0.5


class RewardCase(str, enum.Enum):
    FORMAT_VIOLATION = "format-violation"
    REL_ONLY = "rel-only"
    REL_PLUS_MAIN = "rel-plus-main"
    MAIN_ONLY = "main-only"


@dataclass(frozen=True)
class RewardRecord:
    subject: str
    r_main: float
    r_rel: float
    r_total: float
    case: RewardCase
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["case"] = self.case.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RewardRecord":
        return cls(**{**d, "case": RewardCase(d["case"])})


def main_reward(traj: Trajectory, gold_list: Sequence[str] | None = None, alpha: float = DEFAULT_ALPHA) -> RewardRecord:
    """``-alpha`` on a format violation, else answer token F1 against the gold aliases."""
    gold = traj.question.golden_answers if gold_list is None else gold_list
    if traj.flag.f == 0 or traj.answer is None:
        return RewardRecord("main", -alpha, 0.0, -alpha, RewardCase.FORMAT_VIOLATION, alpha)
    s = answer_f1(traj.answer, gold)
    return RewardRecord("main", s, 0.0, s, RewardCase.MAIN_ONLY, alpha)


def composite_reward(f: int, i_ans: int, r_rel: float, r_main: float, gamma: float = DEFAULT_GAMMA,
                     alpha: float = DEFAULT_ALPHA) -> RewardRecord:
    """The four-branch ranker reward.

    ======  =====  =============  =================
    f       I_ans  r_rel          reward
    ======  =====  =============  =================
    0       any    any            -alpha
    1       1      <= gamma       r_rel
    1       1      > gamma        r_rel + r_main
    1       0      0              r_main
    ======  =====  =============  =================
    """
    if not 0.0 <= r_rel <= 1.0:
        raise ConsistencyError(f"r_rel={r_rel} outside [0, 1]")
    if f == 0:
        return RewardRecord("ranker", r_main, r_rel, -alpha, RewardCase.FORMAT_VIOLATION, alpha, gamma)
    if f != 1:
        raise ConsistencyError(f"format flag must be 0 or 1, got {f}")
    if i_ans:
        if r_rel <= gamma:
            return RewardRecord("ranker", r_main, r_rel, r_rel, RewardCase.REL_ONLY, alpha, gamma)
        return RewardRecord("ranker", r_main, r_rel, r_rel + r_main, RewardCase.REL_PLUS_MAIN, alpha, gamma)
    if r_rel != 0.0:
        raise ConsistencyError(f"r_rel={r_rel} > 0 although the candidate set holds no answer")
    return RewardRecord("ranker", r_main, 0.0, r_main, RewardCase.MAIN_ONLY, alpha, gamma)


def ranking_labels(call: RankerCall) -> RelevanceLabels:
    """Answer-bearing candidates re-expressed as ranks in the ranker's output list."""
    positives = set(call.candidates.d_plus)
    return RelevanceLabels(rank for rank, pos in enumerate(call.output_positions()) if pos in positives)


def call_relevance(call: RankerCall, cutoffs: Iterable[int] = DEFAULT_CUTOFFS) -> float:
    if call.flag.f == 0 or not call.ranking:
        return 0.0
    return relevance_reward(len(call.ranking), ranking_labels(call), cutoffs)


def ranker_reward(call: RankerCall, r_main: float, gamma: float = DEFAULT_GAMMA,
                  cutoffs: Iterable[int] = DEFAULT_CUTOFFS, alpha: float = DEFAULT_ALPHA) -> RewardRecord:
    """Composite reward of one ranker call given its trajectory's main reward.

    ``f`` is the call's own format flag. Main-agent format violations are
    handled upstream by :func:`filter_for_ranker_training`.
    """
    return composite_reward(call.flag.f, call.i_ans, call_relevance(call, cutoffs), r_main, gamma, alpha)


@dataclass(frozen=True)
class FilterStats:
    kept: int
    filtered: int
    calls_kept: int
    calls_filtered: int


def filter_for_ranker_training(trajectories: Iterable[Trajectory]) -> tuple[list[Trajectory], FilterStats]:
    """Drop trajectories whose main agent broke format; their ranker calls get no reward."""
    kept, dropped = [], []
    for t in trajectories:
        (kept if t.flag.f == 1 else dropped).append(t)
    stats = FilterStats(
        len(kept), len(dropped),
        sum(len(t.ranker_calls) for t in kept), sum(len(t.ranker_calls) for t in dropped),
    )
    return kept, stats


def score_trajectories(trajectories: Iterable[Trajectory], alpha: float = DEFAULT_ALPHA,
                       gamma: float = DEFAULT_GAMMA, cutoffs: Iterable[int] = DEFAULT_CUTOFFS) -> list[Trajectory]:
    """Attach reward records to each trajectory's ``rewards`` field (in place) and return them.

    Ranker rewards are only filled for trajectories that pass the main-agent
    format filter.
    """
    cutoffs = tuple(cutoffs)
    out = []
    for t in trajectories:
        main = main_reward(t, alpha=alpha)
        ranker = {}
        if t.flag.f == 1:
            ranker = {c.call_id: ranker_reward(c, main.r_main, gamma, cutoffs, alpha).to_dict() for c in t.ranker_calls}
        t.rewards = {"main": main.to_dict(), "ranker": ranker}
        out.append(t)
    return out
