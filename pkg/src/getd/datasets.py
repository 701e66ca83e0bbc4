"""N-ary tuple files, vocabularies, splitting and rank-1 synthetic KBs.

File format: UTF-8 text, one fact per line, tab-separated, relation label
first followed by the entity labels.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, DataError, InfeasibleError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class Vocab:
    """Bidirectional label <-> id map; ids follow insertion order."""

    def __init__(self, labels: Sequence[str] = ()):
        self.labels: list[str] = []
        self.ids: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self.ids.get(label)
        if idx is None:
            idx = self.ids[label] = len(self.labels)
            self.labels.append(label)
        return idx

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self.ids


@dataclass
class KnowledgeBase:
    arity: int
    entities: Vocab
    relations: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_facts(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


def _empty(arity: int) -> np.ndarray:
    return np.zeros((0, arity + 1), dtype=np.int64)


def _read_vocab(path: Path) -> list[str]:
    return [line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_kb(
    train_path,
    valid_path,
    test_path,
    entity_vocab_path=None,
    relation_vocab_path=None,
) -> KnowledgeBase:
    """Parse three tuple files into a knowledge base.

    Ids are assigned by first appearance across train, valid, then test,
    after any labels preloaded from the optional vocabulary files. Labels
    first seen in valid/test are admitted but counted in
    ``metadata["unseen_in_train"]``.
    """
    entities = Vocab(_read_vocab(Path(entity_vocab_path)) if entity_vocab_path else ())
    relations = Vocab(_read_vocab(Path(relation_vocab_path)) if relation_vocab_path else ())
    arity = None
    splits = {}
    unseen = {"entities": 0, "relations": 0}
    for name, path in zip(SPLITS, (train_path, valid_path, test_path)):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        rows = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if arity is None:
                    if len(fields) < 2:
                        raise DataError(f"{path}:{lineno}: need a relation and at least one entity")
                    arity = len(fields) - 1
                if len(fields) != arity + 1:
                    raise DataError(
                        f"{path}:{lineno}: expected {arity + 1} tab-separated fields, got {len(fields)}"
                    )
                if name != "train":
                    unseen["relations"] += fields[0] not in relations
                    unseen["entities"] += sum(e not in entities for e in set(fields[1:]))
                rows.append([relations.add(fields[0]), *(entities.add(e) for e in fields[1:])])
        splits[name] = np.asarray(rows, dtype=np.int64).reshape(-1, (arity or 0) + 1)
    if arity is None:
        raise DataError("all dataset files are empty")
    if unseen["entities"] or unseen["relations"]:
        log.warning(
            "%d entities and %d relations appear only in valid/test",
            unseen["entities"],
            unseen["relations"],
        )
    kb = KnowledgeBase(
        arity,
        entities,
        relations,
        *(splits[s].reshape(-1, arity + 1) for s in SPLITS),
        metadata={"unseen_in_train": unseen},
    )
    overlap = _split_overlap(kb)
    if overlap:
        log.warning("%d facts occur in more than one split", overlap)
        kb.metadata["split_overlap"] = overlap
    return kb


def _split_overlap(kb: KnowledgeBase) -> int:
    seen = [set(map(tuple, getattr(kb, s).tolist())) for s in SPLITS]
    return len(seen[0] & seen[1]) + len(seen[0] & seen[2]) + len(seen[1] & seen[2])


def load_kb_dir(directory) -> KnowledgeBase:
    """Load ``train.txt``/``valid.txt``/``test.txt`` (plus vocab files if present)."""
    d = Path(directory)
    ent = d / "entities.txt"
    rel = d / "relations.txt"
    return load_kb(
        d / "train.txt",
        d / "valid.txt",
        d / "test.txt",
        ent if ent.exists() else None,
        rel if rel.exists() else None,
    )


def write_kb(kb: KnowledgeBase, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        with (d / f"{name}.txt").open("w", encoding="utf-8") as fh:
            for row in getattr(kb, name).tolist():
                labels = [kb.relations.labels[row[0]], *(kb.entities.labels[e] for e in row[1:])]
                fh.write("\t".join(labels) + "\n")
    (d / "entities.txt").write_text("".join(f"{x}\n" for x in kb.entities.labels), encoding="utf-8")
    (d / "relations.txt").write_text("".join(f"{x}\n" for x in kb.relations.labels), encoding="utf-8")
    return d


def split_dataset(facts: np.ndarray, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle then contiguous train/valid/test cut.

    Valid and test sizes are floored; the remainder goes to train.
    """
    ratios = _check_ratios(ratios)
    facts = np.asarray(facts)
    n = len(facts)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = facts[order]
    n_valid = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train = n - n_valid - n_test
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )


def _check_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    return ratios


@dataclass
class SyntheticSpec:
    n_e: int = 10
    n_r: int = 2
    arity: int = 3
    target_fact_count: int = 500
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_e, self.n_r, self.arity, self.target_fact_count) < 1:
            raise ConfigurationError("synthetic sizes must be positive")
        capacity = self.n_r * self.n_e**self.arity
        if self.target_fact_count > capacity:
            raise InfeasibleError(
                f"{self.target_fact_count} facts requested but only {capacity} tuples exist"
            )
        self.split_ratios = _check_ratios(self.split_ratios)


@lru_cache(maxsize=None)
def _entity_factorizations(count: int, slots: int, limit: int) -> tuple[tuple[int, ...], ...]:
    """Non-increasing tuples of ``slots`` sizes <= ``limit`` multiplying to ``count``."""
    if slots == 0:
        return ((),) if count == 1 else ()
    out = []
    for s in range(min(limit, count), 0, -1):
        if count % s == 0:
            out.extend((s, *rest) for rest in _entity_factorizations(count // s, slots - 1, s))
    return tuple(out)


def support_sizes(n_e: int, n_r: int, arity: int, count: int) -> tuple[int, ...] | None:
    """Support sizes (s_rel, s_1..s_n) with product ``count``.

    Prefers the largest relation support, then the most balanced entity
    supports (smallest maximum); entity sizes are non-increasing by slot.
    """
    for s0 in range(min(n_r, count), 0, -1):
        if count % s0:
            continue
        options = _entity_factorizations(count // s0, arity, n_e)
        if options:
            return (s0, *min(options, key=lambda t: (t[0], t)))
    return None


def nearest_feasible_count(n_e: int, n_r: int, arity: int, count: int) -> int:
    capacity = n_r * n_e**arity
    for delta in range(capacity + 1):
        for c in (count - delta, count + delta):
            if 1 <= c <= capacity and support_sizes(n_e, n_r, arity, c) is not None:
                return c
    raise InfeasibleError("no feasible fact count")


def generate_synthetic(spec: SyntheticSpec) -> KnowledgeBase:
    """Rank-1 binary KB: the outer product of random support indicator vectors."""
    sizes = support_sizes(spec.n_e, spec.n_r, spec.arity, spec.target_fact_count)
    if sizes is None:
        nearest = nearest_feasible_count(spec.n_e, spec.n_r, spec.arity, spec.target_fact_count)
        raise InfeasibleError(
            f"{spec.target_fact_count} facts cannot be written as a product of support sizes "
            f"(relations <= {spec.n_r}, entities <= {spec.n_e}); nearest feasible count is {nearest}"
        )
    rng = np.random.default_rng(spec.seed)
    supports = [sorted(rng.choice(spec.n_r, sizes[0], replace=False).tolist())]
    supports += [sorted(rng.choice(spec.n_e, s, replace=False).tolist()) for s in sizes[1:]]
    facts = np.asarray(list(itertools.product(*supports)), dtype=np.int64)
    train, valid, test = split_dataset(facts, spec.split_ratios, spec.seed)
    return KnowledgeBase(
        spec.arity,
        Vocab([f"e{i}" for i in range(spec.n_e)]),
        Vocab([f"r{i}" for i in range(spec.n_r)]),
        train,
        valid,
        test,
        metadata={"seed": spec.seed, "support_sizes": list(sizes), "supports": supports},
    )


def write_synthetic(kb: KnowledgeBase, spec: SyntheticSpec, directory) -> Path:
    d = write_kb(kb, directory)
    provenance = {
        "generator": "rank-1 indicator outer product",
        "spec": {
            "n_e": spec.n_e,
            "n_r": spec.n_r,
            "arity": spec.arity,
            "target_fact_count": spec.target_fact_count,
            "split_ratios": list(spec.split_ratios),
            "seed": spec.seed,
        },
        "support_sizes": kb.metadata["support_sizes"],
        "supports": kb.metadata["supports"],
        "split_sizes": {s: len(getattr(kb, s)) for s in SPLITS},
    }
    (d / "provenance.json").write_text(json.dumps(provenance, indent=2), encoding="utf-8")
    return d


def kb_to_tensor(kb: KnowledgeBase, cap: int | None = None) -> np.ndarray:
    """Binary tensor of shape [n_r, n_e, ..., n_e] marking every fact of every split."""
    shape = (kb.n_relations, *[kb.n_entities] * kb.arity)
    tc.check_capacity(shape, cap, "KB tensor")
    t = np.zeros(shape)
    facts = kb.all_facts()
    if len(facts):
        t[tuple(facts.T)] = 1.0
    return t
