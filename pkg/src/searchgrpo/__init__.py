"""Rollouts, composite rewards and semantic GRPO grouping for a search agent with a generative ranker."""

from .errors import AuthError, ConsistencyError, DataError, TransportError
from .grouping import (
    GrpoSample,
    SemanticGroup,
    build_loss_mask,
    export_batch,
    filter_min_size,
    greedy_cluster,
    group_advantages,
    group_ranker_calls,
    grpo_surrogate,
    split_by_answer,
)
from .policies import RemoteChatPolicy, ScriptedPolicy
from .protocol import (
    FormatFlag,
    parse_main_turn,
    parse_ranker_turn,
    render_main_prompt,
    render_ranker_prompt,
)
from .retrieval import (
    CandidateSet,
    Document,
    Observation,
    RankerCall,
    RemoteRetriever,
    annotate,
    build_index,
    oracle_observe,
    remote_retrieve,
    retrieve,
    two_stage_observe,
)
from .rewards import RewardRecord, composite_reward, filter_for_ranker_training, main_reward, ranker_reward
from .rollout import Limits, Mode, Question, Trajectory, run_batch, run_group, run_trajectory
from .textmetrics import (
    RelevanceLabels,
    TokenBag,
    answer_f1,
    contains_answer,
    exact_match,
    hit_at_k,
    normalize,
    relevance_reward,
    token_f1,
)

__version__ = "0.1.0"
