"""
From rollouts to trainer-ready samples
======================================

Roll out a small batch with a ranker in the loop, score it, group the ranker
calls and write the advantage-annotated samples.
"""

import json
import sys
from collections import Counter

from searchgrpo import build_index, export_batch, group_ranker_calls, run_batch
from searchgrpo.policies import ScriptedPolicy, identity_ranker
from searchgrpo.rewards import score_trajectories
from searchgrpo.synthetic import make_planted_fixture, top_document_agent

fx = make_planted_fixture()
index = build_index(fx.docs)
ranker = ScriptedPolicy([identity_ranker])

batch = run_batch(fx.questions[:4], top_document_agent(), index, "ranker", ranker, G=4, seed=0)
trajs = score_trajectories(batch.trajectories)

groups, stats = group_ranker_calls(trajs, k_min=3)
print(stats)
for g in groups:
    print(g.uid, "rewards", g.rewards, "advantages", [round(a, 3) for a in g.advantages])

samples = export_batch(groups, trajs, config_hash="demo")
print(Counter(s.subject for s in samples))

# first main-agent sample, trimmed
main = next(s for s in samples if s.subject == "main").to_dict()
main["prompt"] = main["prompt"][-80:]
main["response"] = main["response"][:160] + "..."
main["mask_spans"] = [span for span in main["mask_spans"][:4]]
json.dump(main, sys.stdout, indent=1, ensure_ascii=False)
print()
