"""
A ready-to-run CLI workspace
============================

Writes the planted corpus, its questions, two scripted policies and a config
file into a directory (default ``./workspace``) for the ``searchgrpo`` CLI.
"""

import json
import sys
from pathlib import Path

import yaml

from searchgrpo.synthetic import ANSWER_PATTERN, make_planted_fixture

out = Path(sys.argv[1] if len(sys.argv) > 1 and not sys.argv[1].startswith("-") else "workspace")
out.mkdir(parents=True, exist_ok=True)
fx = make_planted_fixture()

with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
    for d in fx.docs:
        fh.write(json.dumps(d.to_dict()) + "\n")
with open(out / "questions.jsonl", "w", encoding="utf-8") as fh:
    for q in fx.questions:
        fh.write(json.dumps({"id": q.qid, "question": q.question, "golden_answers": list(q.golden_answers),
                             "dataset": q.dataset}) + "\n")

main_policy = {"turns": [{"builtin": "search-question"}, {"builtin": "answer-from-top", "pattern": ANSWER_PATTERN}]}
(out / "main_policy.json").write_text(json.dumps(main_policy, indent=1) + "\n")
(out / "ranker_policy.json").write_text(json.dumps({"turns": [{"builtin": "identity-ranker"}]}, indent=1) + "\n")

config = {
    "corpus": "corpus.jsonl",
    "questions": "questions.jsonl",
    "G": 4,
    "N": 50,
    "K": 5,
    "budget": 6,
    "main_policy": {"scripted": "main_policy.json"},
    "ranker_policy": {"scripted": "ranker_policy.json"},
    "seed": 0,
}
(out / "run.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
print("wrote", ", ".join(sorted(p.name for p in out.iterdir())), "to", out)
