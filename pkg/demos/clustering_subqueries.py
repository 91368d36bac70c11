"""
Semantic groups from recorded sub-queries
=========================================

Ranker calls under one question are clustered greedily by token F1 of their
sub-queries, then normalized within each cluster.
"""

import numpy as np

from searchgrpo import group_advantages, normalize, token_f1
from searchgrpo.grouping import greedy_cluster
from searchgrpo.protocol import FormatFlag
from searchgrpo.retrieval import CandidateSet, RankerCall

sub_queries = [
    "who has played the most state of origins",
    "current record holder for most State of Origin appearances",
    "most State of Origin appearances",
    "most appearances in State of Origin",
]

# Pairwise similarity after normalization
bags = [normalize(q) for q in sub_queries]
sim = np.array([[token_f1(a, b) for b in bags] for a in bags])
np.set_printoptions(precision=3, suppress=True)
print(sim)

# Fake calls carrying only what clustering reads: the sub-query and the order.
calls = [
    RankerCall(f"q/r{i}/s1", "q0", q, CandidateSet(q), 5, "", "", None, FormatFlag.ok(), rollout_index=i)
    for i, q in enumerate(sub_queries, start=1)
]
for cluster in greedy_cluster(calls, delta=0.8):
    print(cluster.index, [c.sub_query for c in cluster.members])

# Advantages inside one group of rewards
rewards = [2.0, 1.0, 0.0, 1.0]
adv = np.array(group_advantages(rewards))
print("advantages", adv, "mean", adv.mean(), "std", adv.std())
