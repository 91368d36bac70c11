"""Semantic GRPO groups for ranker calls, group-normalized advantages, loss masks and batch export.

Ranker calls under one original question rarely share an identical prompt,
so they are grouped by sub-query similarity instead: split by whether the
candidate set holds the answer, greedily cluster each split by token F1
against a cluster representative, and drop clusters smaller than ``k_min``.
Only calls already recorded during the main-agent rollouts are used.
"""

from __future__ import annotations

import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import protocol
from .errors import DataError
from .retrieval import RankerCall
from .rewards import DEFAULT_ALPHA, DEFAULT_GAMMA, main_reward, ranker_reward
from .rollout import Trajectory, render_observation
from .textmetrics import DEFAULT_CUTOFFS, TokenBag, normalize, token_f1

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.8
DEFAULT_K_MIN = 3
DEFAULT_EPSILON = 0.2
ADV_EPS = 1e-6
# Sub-queries are compared after answer-style normalization (articles dropped);
# see greedy_cluster.
DEFAULT_CLUSTER_MODE = "answer"


def split_by_answer(calls: Sequence[RankerCall]) -> tuple[list[RankerCall], list[RankerCall]]:
    """Partition into (easy, hard): candidate set does / does not hold the gold answer."""
    q0s = {c.q0 for c in calls}
    if len(q0s) > 1:
        raise DataError(f"calls from {len(q0s)} different original questions cannot share a split")
    easy = [c for c in calls if c.i_ans == 1]
    hard = [c for c in calls if c.i_ans == 0]
    return easy, hard


@dataclass
class Cluster:
    index: int
    representative: TokenBag
    members: list[RankerCall] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)


def greedy_cluster(calls: Sequence[RankerCall], delta: float = DEFAULT_DELTA,
                   mode: str = DEFAULT_CLUSTER_MODE) -> list[Cluster]:
    """Greedy single pass over calls in (rollout index, step) order.

    Each call joins the first cluster whose representative has
    ``token_f1 >= delta`` with its normalized sub-query; otherwise it opens
    a new cluster and becomes that cluster's representative.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    clusters: list[Cluster] = []
    for call in sorted(calls, key=lambda c: (c.rollout_index, c.step)):
        q = normalize(call.sub_query, mode)
        for cl in clusters:
            if token_f1(q, cl.representative) >= delta:
                cl.members.append(call)
                break
        else:
            clusters.append(Cluster(len(clusters), q, [call]))
    return clusters


def filter_min_size(clusters: Sequence[Cluster], k_min: int = DEFAULT_K_MIN) -> list[Cluster]:
    if k_min < 1:
        raise ValueError(f"k_min must be >= 1, got {k_min}")
    return [c for c in clusters if len(c) >= k_min]


def group_advantages(rewards: Sequence[float], eps: float = ADV_EPS) -> list[float]:
    """``(r - mean) / (population std + eps)``; a constant group gets all zeros."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("advantage normalization needs a group of at least 2 rewards")
    if np.ptp(r) == 0.0:
        return [0.0] * r.size
    return ((r - r.mean()) / (r.std() + eps)).tolist()


@dataclass
class SemanticGroup:
    uid: str
    split: str
    cluster_index: int
    representative: str
    members: list[str]
    rewards: list[float]
    advantages: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "split": self.split,
            "cluster_index": self.cluster_index,
            "representative": self.representative,
            "members": list(self.members),
            "rewards": list(self.rewards),
            "advantages": list(self.advantages),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SemanticGroup":
        return cls(d["uid"], d["split"], d["cluster_index"], d["representative"], list(d["members"]),
                   list(d["rewards"]), list(d.get("advantages", [])))


@dataclass
class GroupingStats:
    calls_recorded: int = 0
    calls_filtered_by_main_format: int = 0
    calls_clustered: int = 0
    calls_grouped: int = 0
    clusters_before_filter: int = 0
    groups_after_filter: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _reward_of(traj: Trajectory, call: RankerCall, alpha: float, gamma: float, cutoffs) -> float:
    stored = (traj.rewards or {}).get("ranker", {}).get(call.call_id)
    if stored is not None:
        return float(stored["r_total"])
    return ranker_reward(call, main_reward(traj, alpha=alpha).r_main, gamma, cutoffs, alpha).r_total


def group_ranker_calls(trajectories: Sequence[Trajectory], delta: float = DEFAULT_DELTA, k_min: int = DEFAULT_K_MIN,
                       mode: str = DEFAULT_CLUSTER_MODE, alpha: float = DEFAULT_ALPHA, gamma: float = DEFAULT_GAMMA,
                       cutoffs: Iterable[int] = DEFAULT_CUTOFFS) -> tuple[list[SemanticGroup], GroupingStats]:
    """Form uid-labelled GRPO groups for every question in ``trajectories``.

    Trajectories with a main-agent format violation are dropped first. Uids
    read ``{question_id}_{easy|hard}_cluster_{c}``, with ``c`` numbered before
    the size filter, so surviving uids can skip indices.
    """
    cutoffs = tuple(cutoffs)
    stats = GroupingStats()
    by_question: "OrderedDict[str, list[Trajectory]]" = OrderedDict()
    for t in trajectories:
        by_question.setdefault(t.question.qid, []).append(t)
    groups: list[SemanticGroup] = []
    for qid, trajs in by_question.items():
        owner: dict[str, Trajectory] = {}
        calls: list[RankerCall] = []
        for t in trajs:
            stats.calls_recorded += len(t.ranker_calls)
            if t.flag.f == 0:
                stats.calls_filtered_by_main_format += len(t.ranker_calls)
                continue
            for c in t.ranker_calls:
                owner[c.call_id] = t
                calls.append(c)
        stats.calls_clustered += len(calls)
        for split, part in zip(("easy", "hard"), split_by_answer(calls)):
            clusters = greedy_cluster(part, delta, mode)
            stats.clusters_before_filter += len(clusters)
            for cl in filter_min_size(clusters, k_min):
                rewards = [_reward_of(owner[c.call_id], c, alpha, gamma, cutoffs) for c in cl.members]
                adv = group_advantages(rewards) if len(rewards) >= 2 else [0.0] * len(rewards)
                groups.append(SemanticGroup(
                    uid=f"{qid}_{split}_cluster_{cl.index}",
                    split=split,
                    cluster_index=cl.index,
                    representative=" ".join(cl.representative.tokens),
                    members=[c.call_id for c in cl.members],
                    rewards=rewards,
                    advantages=adv,
                ))
                stats.calls_grouped += len(cl.members)
    stats.groups_after_filter = len(groups)
    return groups, stats


# ---------------------------------------------------------------------------
# Loss masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSpan:
    start: int
    end: int
    weight: int

    def to_list(self) -> list[int]:
        return [self.start, self.end, self.weight]


_WEIGHTS = {"agent": 1, "observation": 0}


def build_loss_mask(segments: Sequence[tuple[int, int, str]], length: Optional[int] = None) -> list[MaskSpan]:
    """Character spans labelled agent/observation -> weighted mask spans.

    Spans must be contiguous from 0, non-overlapping, and (when ``length``
    is given) end exactly at ``length``. Empty spans are dropped.
    """
    spans = []
    cursor = 0
    for start, end, kind in segments:
        if kind not in _WEIGHTS:
            raise DataError(f"unknown segment kind {kind!r}")
        if start != cursor:
            what = "gap" if start > cursor else "overlap"
            raise DataError(f"{what} in segmentation at offset {cursor} (next span starts at {start})")
        if end < start:
            raise DataError(f"span ({start}, {end}) ends before it starts")
        if end > start:
            spans.append(MaskSpan(start, end, _WEIGHTS[kind]))
        cursor = end
    if length is not None and cursor != length:
        raise DataError(f"segmentation covers {cursor} characters of a {length}-character response")
    return spans


def whitespace_tokens(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in re.finditer(r"\S+", text)]


def token_weights(text: str, spans: Sequence[MaskSpan],
                  tokenizer: Callable[[str], list[tuple[int, int]]] = whitespace_tokens) -> list[int]:
    """Per-token weights: a token takes the weight of the span holding its first character."""
    out = []
    for start, _ in tokenizer(text):
        for sp in spans:
            if sp.start <= start < sp.end:
                out.append(sp.weight)
                break
        else:
            raise DataError(f"token at offset {start} lies outside every mask span")
    return out


def segment_main_response(traj: Trajectory) -> list[tuple[str, str]]:
    """Interleave agent turns with the environment text that followed them."""
    parts: list[tuple[str, str]] = []
    for i, turn in enumerate(traj.turns):
        parts.append((turn, "agent"))
        if i < traj.m:
            parts.append(("\n" + render_observation(traj.steps[i].observation) + "\n", "observation"))
        elif i == traj.m and i < len(traj.turns) - 1:
            parts.append(("\n" + protocol.FORCED_ANSWER_MESSAGE + "\n", "observation"))
    return parts


def _join_segments(parts: Sequence[tuple[str, str]]) -> tuple[str, list[MaskSpan]]:
    spans, cursor = [], 0
    for text, kind in parts:
        if text:
            spans.append((cursor, cursor + len(text), kind))
            cursor += len(text)
    response = "".join(t for t, _ in parts)
    return response, build_loss_mask(spans, len(response))


# ---------------------------------------------------------------------------
# Clipped surrogate
# ---------------------------------------------------------------------------


def grpo_surrogate(ratios: Sequence[Sequence[float]], advantages: Sequence[float], mask: Sequence[Sequence[float]],
                   epsilon: float = DEFAULT_EPSILON, groups: Optional[Sequence] = None,
                   per_token_mean: bool = False) -> float:
    """Clipped GRPO objective over token-level ratios and per-sample advantages.

    Per sample, masked tokens contribute ``min(rho*A, clip(rho, 1-eps, 1+eps)*A)``
    and are summed (or averaged over masked tokens with ``per_token_mean``).
    Samples are averaged within each group and groups averaged together;
    with ``groups=None`` all samples form one group.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not len(ratios) == len(advantages) == len(mask):
        raise ValueError(f"length mismatch: {len(ratios)} ratios, {len(advantages)} advantages, {len(mask)} masks")
    if groups is not None and len(groups) != len(ratios):
        raise ValueError(f"length mismatch: {len(groups)} group labels for {len(ratios)} samples")
    if not ratios:
        raise ValueError("no samples")
    per_sample = []
    for rho, adv, m in zip(ratios, advantages, mask):
        rho = np.asarray(rho, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        if rho.shape != m.shape:
            raise ValueError(f"ratio/mask length mismatch: {rho.shape} vs {m.shape}")
        term = np.minimum(rho * adv, np.clip(rho, 1.0 - epsilon, 1.0 + epsilon) * adv)
        total = float(np.sum(m * term))
        if per_token_mean:
            denom = float(m.sum())
            total = total / denom if denom else 0.0
        per_sample.append(total)
    labels = groups if groups is not None else [0] * len(per_sample)
    by_group: "OrderedDict[object, list[float]]" = OrderedDict()
    for g, v in zip(labels, per_sample):
        by_group.setdefault(g, []).append(v)
    return float(np.mean([np.mean(v) for v in by_group.values()]))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


@dataclass
class GrpoSample:
    uid: str
    subject: str
    prompt: str
    response: str
    advantage: float
    reward: float
    mask_spans: list[MaskSpan]
    source_id: str
    template_version: str = protocol.TEMPLATE_VERSION
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "subject": self.subject,
            "source_id": self.source_id,
            "prompt": self.prompt,
            "response": self.response,
            "advantage": self.advantage,
            "reward": self.reward,
            "mask_spans": [s.to_list() for s in self.mask_spans],
            "template_version": self.template_version,
            "config_hash": self.config_hash,
        }


def export_batch(groups: Sequence[SemanticGroup], trajectories: Sequence[Trajectory], config_hash: str = "",
                 include_main: bool = True, alpha: float = DEFAULT_ALPHA) -> list[GrpoSample]:
    """One sample per grouped ranker call, then main-agent samples grouped per question.

    Main-agent groups need at least two rollouts; smaller ones are skipped
    with a warning.
    """
    calls = {c.call_id: c for t in trajectories for c in t.ranker_calls}
    out: list[GrpoSample] = []
    for g in groups:
        if len(g.advantages) != len(g.members):
            raise DataError(f"group {g.uid} has {len(g.members)} members but {len(g.advantages)} advantages")
        for cid, adv, rew in zip(g.members, g.advantages, g.rewards):
            call = calls.get(cid)
            if call is None:
                raise DataError(f"group {g.uid} references unknown ranker call {cid!r}")
            spans = build_loss_mask([(0, len(call.response), "agent")], len(call.response))
            out.append(GrpoSample(g.uid, "ranker", call.prompt, call.response, adv, rew, spans, cid,
                                  config_hash=config_hash))
    if include_main:
        by_question: "OrderedDict[str, list[Trajectory]]" = OrderedDict()
        for t in trajectories:
            by_question.setdefault(t.question.qid, []).append(t)
        for qid, trajs in by_question.items():
            if len(trajs) < 2:
                logger.warning("question %s has %d rollout(s); main-agent group skipped", qid, len(trajs))
                continue
            trajs = sorted(trajs, key=lambda t: t.rollout_index)
            rewards = [_main_total(t, alpha) for t in trajs]
            for t, adv, rew in zip(trajs, group_advantages(rewards), rewards):
                response, spans = _join_segments(segment_main_response(t))
                prompt = protocol.render_main_prompt(t.question.question)
                out.append(GrpoSample(qid, "main", prompt, response, adv, rew, spans, t.trajectory_id,
                                      config_hash=config_hash))
    return out


def _main_total(traj: Trajectory, alpha: float) -> float:
    stored = (traj.rewards or {}).get("main")
    return float(stored["r_total"]) if stored else main_reward(traj, alpha=alpha).r_total
