"""Analysis reports over trajectory files: search-turn histograms, F1/EM tables, oracle gaps, Hit@k series.

Reports return plain data (rows of dicts) and render to CSV/JSON; plotting
is left to the caller.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .retrieval import RankerCall
from .rewards import ranking_labels
from .rollout import DEFAULT_BUDGET, Trajectory
from .textmetrics import answer_f1, exact_match, hit_at_k


@dataclass(frozen=True)
class TurnHistogram:
    percentages: dict[int, float]
    average: float
    n: int = 0

    def __post_init__(self):
        total = sum(self.percentages.values())
        if abs(total - 100.0) > 1e-6:
            raise ValueError(f"turn percentages sum to {total}, not 100")

    def to_dict(self) -> dict:
        return {"n": self.n, "percentages": {str(k): v for k, v in self.percentages.items()},
                "average": self.average}


def histogram_from_percentages(percentages: Mapping[int, float], n: int = 0) -> TurnHistogram:
    pct = {int(t): float(p) for t, p in sorted(percentages.items())}
    return TurnHistogram(pct, sum(t * p for t, p in pct.items()) / 100.0, n)


def report_turns(trajectories: Sequence[Trajectory], budget: int = DEFAULT_BUDGET) -> TurnHistogram:
    """Share of trajectories by number of executed searches, 0..budget."""
    if not trajectories:
        raise ValueError("no trajectories to report on")
    counts = [0] * (max(budget, max(t.m for t in trajectories)) + 1)
    for t in trajectories:
        counts[t.m] += 1
    n = len(trajectories)
    pct = {turns: 100.0 * c / n for turns, c in enumerate(counts)}
    return TurnHistogram(pct, sum(t.m for t in trajectories) / n, n)


def report_eval(trajectories: Iterable[Trajectory]) -> list[dict]:
    """Per-dataset mean answer F1 and EM, plus an ``all`` row.

    Every trajectory counts once; a missing answer scores 0.
    """
    per: "OrderedDict[str, list[tuple[float, int]]]" = OrderedDict()
    for t in trajectories:
        gold = t.question.golden_answers
        score = (answer_f1(t.answer, gold), exact_match(t.answer, gold)) if t.answer is not None else (0.0, 0)
        per.setdefault(t.question.dataset, []).append(score)
    rows = []
    everything = []
    for ds in sorted(per):
        vals = per[ds]
        everything.extend(vals)
        rows.append(_eval_row(ds, vals))
    if everything:
        rows.append(_eval_row("all", everything))
    return rows


def _eval_row(name: str, vals: list[tuple[float, int]]) -> dict:
    n = len(vals)
    return {"dataset": name, "n": n, "f1": sum(v[0] for v in vals) / n, "em": sum(v[1] for v in vals) / n}


def compare_eval(standard: Sequence[dict], oracle: Sequence[dict]) -> list[dict]:
    """Join two eval tables by dataset; ``gap = oracle - standard`` and the relative gain."""
    base = {r["dataset"]: r for r in standard}
    rows = []
    for r in oracle:
        s = base.get(r["dataset"])
        if s is None:
            continue
        gap = r["f1"] - s["f1"]
        rows.append({
            "dataset": r["dataset"],
            "n": s["n"],
            "standard_f1": s["f1"],
            "oracle_f1": r["f1"],
            "gap": gap,
            "rel_gain": gap / s["f1"] if s["f1"] else math.inf if gap > 0 else 0.0,
        })
    return rows


def call_hit(call: RankerCall, k: int) -> int:
    """Hit@k of the ranker's own output; a malformed call scores 0."""
    if call.flag.f == 0 or not call.ranking:
        return 0
    return hit_at_k(len(call.ranking), ranking_labels(call), k)


def report_ranking_quality(trajectories: Iterable[Trajectory], k: int = 5, by: str = "batch") -> list[dict]:
    """Mean Hit@k of ranker calls per training batch (``by="batch"``) or per search step (``by="step"``)."""
    if by not in ("batch", "step"):
        raise ValueError(f"by must be 'batch' or 'step', got {by!r}")
    acc: dict[int, list[int]] = defaultdict(list)
    for t in trajectories:
        for c in t.ranker_calls:
            acc[t.batch_index if by == "batch" else c.step].append(call_hit(c, k))
    return [{by: x, "n": len(v), f"hit@{k}": sum(v) / len(v)} for x, v in sorted(acc.items())]


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
