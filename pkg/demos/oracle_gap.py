"""
How much does retrieval quality cap the agent?
==============================================

A planted corpus buries each answer at BM25 rank 6-15. The same scripted agent
runs with plain top-5 retrieval and with answer-bearing documents promoted.
"""

from searchgrpo import build_index, run_batch
from searchgrpo.reporting import compare_eval, report_eval, report_turns, to_csv
from searchgrpo.synthetic import make_planted_fixture, top_document_agent

fx = make_planted_fixture()
index = build_index(fx.docs)
print(len(fx.docs), "documents,", len(fx.questions), "questions")

runs = {}
for mode in ("standard", "oracle"):
    runs[mode] = run_batch(fx.questions, top_document_agent(), index, mode, G=1).trajectories

print(to_csv(compare_eval(report_eval(runs["standard"]), report_eval(runs["oracle"]))))

hist = report_turns(runs["oracle"])
print("searches per question:", {t: p for t, p in hist.percentages.items() if p}, "mean", hist.average)
