"""Known-true entity sets per query, shared by the loss and filtered ranking."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .models import as_fact_array


def query_key(fact: Sequence[int], position: int) -> tuple[int, tuple[int, ...]]:
    """The fact with slot ``position`` removed, tagged with the position."""
    fact = tuple(int(x) for x in fact)
    return position, fact[:position] + fact[position + 1 :]


class FilterIndex:
    """Maps (position, fact-with-hole) to the set of ids completing a known fact."""

    def __init__(self, arity: int):
        self.arity = arity
        self._known: dict[tuple[int, tuple[int, ...]], set[int]] = defaultdict(set)

    def add(self, facts) -> None:
        arr = as_fact_array(facts)
        if arr.size == 0:
            return
        if arr.shape[1] != self.arity + 1:
            raise DataError(f"fact of arity {arr.shape[1] - 1} added to arity-{self.arity} filter")
        for row in arr.tolist():
            for p in range(self.arity + 1):
                self._known[query_key(row, p)].add(row[p])

    def known(self, fact: Sequence[int], position: int) -> frozenset[int]:
        return frozenset(self._known.get(query_key(fact, position), ()))

    def __len__(self) -> int:
        return len(self._known)

    def keys(self):
        return self._known.keys()

    def mask(self, facts: np.ndarray, position: int, n_candidates: int) -> np.ndarray:
        """Boolean (B, n_candidates); True marks a known-true competitor to drop.

        The fact's own id at ``position`` is never masked.
        """
        out = np.zeros((len(facts), n_candidates), dtype=bool)
        for b, row in enumerate(facts.tolist()):
            ids = self._known.get(query_key(row, position))
            if ids:
                out[b, list(ids)] = True
            out[b, row[position]] = False
        return out


def build_filter_index(splits: Iterable, arity: int) -> FilterIndex:
    index = FilterIndex(arity)
    for facts in splits:
        index.add(facts)
    return index


def build_filter_indices(kb) -> tuple[FilterIndex, FilterIndex]:
    """(loss filter over the train split, evaluation filter over all splits)."""
    loss_filter = build_filter_index([kb.train], kb.arity)
    eval_filter = build_filter_index([kb.train, kb.valid, kb.test], kb.arity)
    return loss_filter, eval_filter
