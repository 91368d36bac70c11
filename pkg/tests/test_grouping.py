from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from searchgrpo.errors import DataError
from searchgrpo.grouping import (
    Cluster,
    MaskSpan,
    SemanticGroup,
    build_loss_mask,
    export_batch,
    filter_min_size,
    greedy_cluster,
    group_advantages,
    group_ranker_calls,
    grpo_surrogate,
    segment_main_response,
    split_by_answer,
    token_weights,
)
from searchgrpo.policies import ScriptedPolicy, identity_ranker
from searchgrpo.retrieval import build_index
from searchgrpo.rewards import score_trajectories
from searchgrpo.rollout import Mode, run_batch
from searchgrpo.synthetic import make_planted_fixture, top_document_agent
from searchgrpo.textmetrics import normalize, token_f1

from support import CLUSTER_POOLS_5, make_call, pool_calls


def test_split_examples():
    ex1 = make_call("island with community building built 1911-12", i_ans=1)
    ex2 = make_call("New York (1916 Film)", i_ans=0)
    assert split_by_answer([ex1, ex2]) == ([ex1], [ex2])
    assert split_by_answer([]) == ([], [])
    with pytest.raises(DataError):
        split_by_answer([make_call("a", q0="x"), make_call("b", q0="y")])


def test_cluster_first_pool():
    clusters = greedy_cluster(pool_calls(CLUSTER_POOLS_5[0]), 0.8)
    assert [len(c) for c in clusters] == [1, 1, 2]
    assert clusters[2].representative == normalize("most State of Origin appearances", "answer")


def test_cluster_birth_years_stay_apart():
    calls = [make_call("Dani Pacheco birth year", rollout_index=1), make_call("Agnė Čepelytė birth year", rollout_index=2)]
    assert len(greedy_cluster(calls, 0.8)) == 2
    assert token_f1(normalize("Dani Pacheco birth year", "answer"),
                    normalize("Agnė Čepelytė birth year", "answer")) == pytest.approx(0.5)


def test_cluster_single_and_empty():
    clusters = greedy_cluster([make_call("x")])
    assert len(clusters) == 1 and clusters[0].index == 0
    assert greedy_cluster([]) == []
    with pytest.raises(ValueError):
        greedy_cluster([make_call("x")], delta=0.0)


def test_cluster_iteration_order_is_rollout_then_step():
    a = make_call("alpha beta gamma delta", rollout_index=2, step=1, call_id="late")
    b = make_call("alpha beta gamma epsilon", rollout_index=1, step=2, call_id="early-2")
    c = make_call("zeta eta", rollout_index=1, step=1, call_id="early-1")
    clusters = greedy_cluster([a, b, c], 0.5)
    assert [[m.call_id for m in cl.members] for cl in clusters] == [["early-1"], ["early-2", "late"]]


def test_query_mode_is_available():
    # query mode keeps articles: the first congress pair then sits exactly on the
    # threshold and merges, unlike the printed labels [0, 1, 1, 1]
    pool = CLUSTER_POOLS_5[8]
    first, second = (normalize(q, "query") for _, q in pool[:2])
    assert token_f1(first, second) == 0.8
    clusters = greedy_cluster(pool_calls(pool), 0.8, mode="query")
    label = {m.rollout_index: cl.index for cl in clusters for m in cl.members}
    assert [label[i] for i in range(1, 5)] == [0, 0, 1, 1]


def test_filter_min_size_examples():
    def cl(n, i):
        return Cluster(i, normalize("x"), [make_call("x")] * n)

    kept = filter_min_size([cl(4, 0), cl(2, 1), cl(3, 2)], 3)
    assert [len(c) for c in kept] == [4, 3]
    assert filter_min_size([cl(1, 0), cl(1, 1)], 3) == []
    all_ = [cl(1, 0), cl(2, 1)]
    assert filter_min_size(all_, 1) == all_
    with pytest.raises(ValueError):
        filter_min_size(all_, 0)


def test_advantage_examples():
    assert group_advantages([2.0, 1.0, 0.0]) == pytest.approx([1.224744, 0.0, -1.224744], abs=1e-5)
    assert group_advantages([0.7, 0.7, 0.7]) == [0.0, 0.0, 0.0]
    assert group_advantages([1, 0]) == pytest.approx([1.0, -1.0], abs=1e-5)
    with pytest.raises(ValueError):
        group_advantages([1.0])


@given(st.lists(st.floats(-0.2, 2.0), min_size=2, max_size=16))
def test_advantage_properties(rewards):
    adv = np.asarray(group_advantages(rewards))
    r = np.asarray(rewards)
    assert abs(adv.mean()) < 1e-9
    if np.ptp(r) == 0:
        assert not adv.any()
    else:
        # order preserving and bounded by the unit-std normalization
        assert np.all(np.diff(adv[np.argsort(r, kind="stable")]) >= -1e-12)
        assert adv.std() <= 1.0


def test_mask_examples():
    assert [s.weight for s in build_loss_mask([(0, 10, "agent"), (10, 30, "observation"), (30, 35, "agent")], 35)] \
        == [1, 0, 1]
    assert build_loss_mask([(0, 12, "agent")], 12) == [MaskSpan(0, 12, 1)]
    assert build_loss_mask([], 0) == []
    assert build_loss_mask([(0, 0, "agent")], 0) == []


@pytest.mark.parametrize("segments,length", [
    ([(0, 10, "agent"), (12, 20, "observation")], 20),
    ([(0, 10, "agent"), (8, 20, "observation")], 20),
    ([(0, 10, "agent")], 12),
    ([(0, 10, "tool")], 10),
    ([(1, 10, "agent")], 10),
])
def test_mask_structural_errors(segments, length):
    with pytest.raises(DataError):
        build_loss_mask(segments, length)


def test_token_weights_whitespace():
    text = "think hard <tool_response> doc text </tool_response> answer"
    obs_start = text.index("<tool_response>")
    obs_end = text.index("answer")
    spans = build_loss_mask([(0, obs_start, "agent"), (obs_start, obs_end, "observation"),
                             (obs_end, len(text), "agent")], len(text))
    assert token_weights(text, spans) == [1, 1, 0, 0, 0, 0, 1]


def test_surrogate_examples():
    assert grpo_surrogate([[1.0, 1.0], [1.0]], [2.0, -1.0], [[1, 1], [1]]) == pytest.approx((4.0 - 1.0) / 2, abs=1e-12)
    assert grpo_surrogate([[2.0]], [1.0], [[1]], 0.2) == pytest.approx(1.2, abs=1e-12)
    assert grpo_surrogate([[0.5]], [-1.0], [[1]], 0.2) == pytest.approx(-0.8, abs=1e-12)


def test_surrogate_mask_groups_and_token_mean():
    ratios = [[1.1, 3.0, 0.9], [1.0, 1.0]]
    adv = [1.0, -2.0]
    mask = [[1, 0, 1], [1, 1]]
    s1 = 1.1 + 0.9
    s2 = -4.0
    assert grpo_surrogate(ratios, adv, mask) == pytest.approx((s1 + s2) / 2, abs=1e-12)
    assert grpo_surrogate(ratios, adv, mask, per_token_mean=True) == pytest.approx((s1 / 2 + s2 / 2) / 2, abs=1e-12)
    three = ratios + [[1.0]]
    assert grpo_surrogate(three, adv + [3.0], mask + [[1]], groups=["a", "a", "b"]) == \
        pytest.approx(((s1 + s2) / 2 + 3.0) / 2, abs=1e-12)
    assert grpo_surrogate([[1.0]], [1.0], [[0]], per_token_mean=True) == 0.0


@pytest.mark.parametrize("kwargs", [
    dict(ratios=[[1.0]], advantages=[1.0, 2.0], mask=[[1]]),
    dict(ratios=[[1.0, 1.0]], advantages=[1.0], mask=[[1]]),
    dict(ratios=[[1.0]], advantages=[1.0], mask=[[1]], epsilon=1.5),
    dict(ratios=[], advantages=[], mask=[]),
    dict(ratios=[[1.0]], advantages=[1.0], mask=[[1]], groups=[0, 1]),
])
def test_surrogate_errors(kwargs):
    with pytest.raises(ValueError):
        grpo_surrogate(**kwargs)


def _batch(G=4, seed=0):
    fx = make_planted_fixture()
    return run_batch(fx.questions[:6], top_document_agent(), build_index(fx.docs), Mode.RANKER,
                     ScriptedPolicy([identity_ranker]), G=G, seed=seed).trajectories


def test_group_invariants():
    trajs = _batch()
    groups, stats = group_ranker_calls(trajs, k_min=3)
    calls = {c.call_id: c for t in trajs for c in t.ranker_calls}
    assert groups and stats.groups_after_filter == len(groups)
    seen = set()
    for g in groups:
        qid, split, _, idx = g.uid.rsplit("_", 3)
        assert g.uid == f"{qid}_{split}_cluster_{g.cluster_index}" and split == g.split
        members = [calls[m] for m in g.members]
        assert len(members) >= 3
        assert {m.i_ans for m in members} == {1 if g.split == "easy" else 0}
        rep = normalize(g.representative, "answer")
        assert all(token_f1(normalize(m.sub_query, "answer"), rep) >= 0.8 for m in members)
        assert not seen & set(g.members)
        seen |= set(g.members)
        assert len(g.advantages) == len(g.rewards) == len(members)
        assert SemanticGroup.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    again, _ = group_ranker_calls(trajs, k_min=3)
    assert [g.uid for g in again] == [g.uid for g in groups]


def test_group_uses_stored_rewards_when_present():
    trajs = score_trajectories(_batch())
    t = trajs[0]
    cid = t.ranker_calls[0].call_id
    t.rewards["ranker"][cid]["r_total"] = 42.0
    groups, _ = group_ranker_calls(trajs, k_min=1)
    g = next(g for g in groups if cid in g.members)
    assert g.rewards[g.members.index(cid)] == 42.0


def test_export_ranker_group_of_three():
    trajs = _batch(G=3)
    groups, _ = group_ranker_calls(trajs, k_min=3)
    g = groups[0]
    samples = [s for s in export_batch([g], trajs, "abc", include_main=False)]
    assert len(samples) == len(g.members) >= 3 and {s.uid for s in samples} == {g.uid}
    for s in samples:
        assert s.subject == "ranker" and s.config_hash == "abc"
        assert s.mask_spans == [MaskSpan(0, len(s.response), 1)]
        assert set(s.to_dict()) >= {"uid", "subject", "prompt", "response", "advantage", "reward", "mask_spans",
                                    "template_version", "config_hash"}


def test_export_main_agent_group():
    trajs = _batch(G=8)
    samples = [s for s in export_batch([], trajs) if s.subject == "main"]
    q0 = [s for s in samples if s.uid == "q00"]
    assert len(q0) == 8 and [s.source_id for s in q0] == [f"q00/r{i}" for i in range(1, 9)]
    s = q0[0]
    observed = "".join(s.response[sp.start:sp.end] for sp in s.mask_spans if sp.weight == 0)
    assert "<tool_response>" in observed
    agent = "".join(s.response[sp.start:sp.end] for sp in s.mask_spans if sp.weight == 1)
    assert "<tool_response>" not in agent and "<tool_call>" in agent


def test_export_empty_and_dangling():
    assert export_batch([], []) == []
    trajs = _batch(G=2)
    bad = SemanticGroup("q00_easy_cluster_0", "easy", 0, "x", ["nope/r1/s1", "nope/r2/s1"], [1.0, 0.0], [1.0, -1.0])
    with pytest.raises(DataError, match="nope"):
        export_batch([bad], trajs)


def test_segmentation_covers_forced_answer():
    from searchgrpo.policies import answer_turn, search_turn
    from searchgrpo.retrieval import Document
    from searchgrpo.rollout import Limits, Question, run_trajectory

    index = build_index([Document("d1", "t", "gold here")])
    main = ScriptedPolicy([search_turn("gold"), search_turn("gold"), answer_turn("gold")])
    t = run_trajectory(Question("q", "q?", ("gold",)), main, index, limits=Limits(1, 1, 1))
    kinds = [k for _, k in segment_main_response(t)]
    assert kinds == ["agent", "observation", "agent", "observation", "agent"]
