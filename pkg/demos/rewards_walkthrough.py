"""
Scoring a ranker call
=====================

Answer metrics, Hit@k and the composite ranker reward on two hand-built calls.
"""

from searchgrpo import answer_f1, composite_reward, parse_ranker_turn
from searchgrpo.retrieval import CandidateSet, Document, RankerCall
from searchgrpo.rewards import ranker_reward

# Token F1 drops articles and punctuation before counting overlap.
print("F1('the city of Harpswell', 'Harpswell') =", answer_f1("the city of Harpswell", ["Harpswell"]))

# A ranker reply: free-form reasoning, then an ordered index list.
reply = "<reason>[1] names the road the hall stands on.</reason>\n<rerank>[1] > [48] > [2] > [32] > [39]</rerank>"
turn, flag = parse_ranker_turn(reply, n=50, k=5)
print("ranking:", turn.ranking, "format ok:", flag.f == 1)

# Fifty candidates; the first one holds the answer.
docs = tuple(Document(f"d{i}", f"T{i}", "Harpswell Island Road" if i == 1 else "filler") for i in range(1, 51))
cands = CandidateSet("island with community building", docs, tuple(range(50, 0, -1)), d_plus=(0,), annotated=True)
call = RankerCall("demo/r1/s1", "q0", cands.sub_query, cands, 5, "", reply, turn.ranking, flag)

# Relevance is perfect (Hit@1 = Hit@3 = Hit@5 = 1), above gamma, so the
# trajectory's answer reward is added on top.
print(ranker_reward(call, r_main=1.0))

# The branches, one line each
for args in [(0, 1, 1.0, 1.0), (1, 1, 1 / 3, 1.0), (1, 1, 0.5, 1.0), (1, 1, 2 / 3, 1.0), (1, 0, 0.0, 1.0)]:
    rec = composite_reward(*args)
    print(f"f={args[0]} I_ans={args[1]} r_rel={args[2]:.3f} r_main={args[3]:.1f} -> {rec.r_total:+.3f} ({rec.case.value})")
