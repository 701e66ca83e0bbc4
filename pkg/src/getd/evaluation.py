"""Filtered ranking metrics: MRR and Hits@{1,3,10}."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .filtering import FilterIndex
from .models import ContractionPass, KBModel

HITS_AT = (1, 3, 10)


@dataclass
class EvalReport:
    mrr: float
    hits: dict[int, float]
    per_position: list[dict] = field(default_factory=list)
    count: int = 0

    def as_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            **{f"hits{k}": self.hits[k] for k in HITS_AT},
            "per_position": self.per_position,
            "count": self.count,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    @staticmethod
    def csv_header() -> str:
        return "mrr,hits10,hits3,hits1,count"

    def csv_row(self) -> str:
        return f"{self.mrr:.6f},{self.hits[10]:.6f},{self.hits[3]:.6f},{self.hits[1]:.6f},{self.count}"


def _summary(ranks: np.ndarray) -> dict:
    # fsum is correctly rounded, so the mean does not depend on query order
    return {
        "mrr": math.fsum((1.0 / ranks).tolist()) / ranks.size,
        **{f"hits{k}": float(np.mean(ranks <= k)) for k in HITS_AT},
        "count": int(ranks.size),
    }


def filtered_ranks(
    m: KBModel,
    facts,
    position: int,
    eval_filter: FilterIndex | None,
    batch_size: int = 512,
) -> np.ndarray:
    """Filtered rank of every fact's true id at ``position``.

    Ties are optimistic: only strictly greater competitor scores count.
    ``eval_filter=None`` gives raw ranks.
    """
    m.check_position(position)
    facts = m.check_facts(facts)
    out = np.empty(len(facts), dtype=np.int64)
    batch_size = min(batch_size, m.chunk_size())
    for start in range(0, len(facts), batch_size):
        chunk = facts[start : start + batch_size]
        scores = ContractionPass(m, chunk).candidate_scores(position)
        truth = chunk[:, position]
        true_scores = scores[np.arange(len(chunk)), truth]
        better = scores > true_scores[:, None]
        if eval_filter is not None:
            better &= ~eval_filter.mask(chunk, position, scores.shape[1])
        out[start : start + batch_size] = 1 + better.sum(axis=1)
    return out


def rank_fact(m: KBModel, f, position: int, eval_filter: FilterIndex | None) -> int:
    return int(filtered_ranks(m, f, position, eval_filter)[0])


def evaluate(
    m: KBModel,
    facts,
    eval_filter: FilterIndex | None,
    include_relation: bool = False,
    batch_size: int = 512,
) -> EvalReport:
    """Aggregate filtered ranks over every fact and every entity position.

    ``include_relation`` also ranks the relation slot (debugging only).
    """
    facts = m.check_facts(facts)
    if len(facts) == 0:
        raise DataError("cannot evaluate an empty fact set")
    positions = list(range(0 if include_relation else 1, m.arity + 1))
    per_position, all_ranks = [], []
    for p in positions:
        ranks = filtered_ranks(m, facts, p, eval_filter, batch_size)
        per_position.append({"position": p, **_summary(ranks)})
        all_ranks.append(ranks)
    ranks = np.concatenate(all_ranks)
    s = _summary(ranks)
    return EvalReport(
        mrr=s["mrr"],
        hits={k: s[f"hits{k}"] for k in HITS_AT},
        per_position=per_position,
        count=s["count"],
    )
