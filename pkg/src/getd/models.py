"""Scoring models for n-ary facts: GETD, n-TuckER and n-CP.

A fact is an ``(n+1)``-tuple ``(relation, e_1, ..., e_n)``; batches of facts
are integer arrays of shape ``(B, n+1)`` with the relation in column 0.
"Position" (or "slot") ``p`` refers to a column of that array, so position 0
is the relation slot and positions ``1..n`` are entity slots.

Every model exposes the same contraction graph through :class:`ContractionPass`:
all slots except the varied one are contracted into a *query vector*, and
candidate scores are one matrix product of the query vectors with the
embedding matrix of the varied slot. Gradients are propagated by hand-written
reverse-mode rules for this fixed graph.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import ClassVar, NamedTuple, Sequence

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, DimensionError, InfeasibleError, VocabError

MODEL_KINDS = ("getd", "ntucker", "ncp")


class Fact(NamedTuple):
    relation: int
    entities: tuple[int, ...]

    def as_tuple(self) -> tuple[int, ...]:
        return (self.relation, *self.entities)


def as_fact_array(facts) -> np.ndarray:
    """Normalise a Fact, a tuple, or a sequence of either to an int64 (B, n+1) array."""
    if isinstance(facts, Fact):
        return np.asarray([facts.as_tuple()], dtype=np.int64)
    arr = np.asarray(
        [f.as_tuple() if isinstance(f, Fact) else f for f in facts]
        if not isinstance(facts, np.ndarray)
        else facts,
        dtype=np.int64,
    )
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


@dataclass
class DropoutMasks:
    """Inverted-dropout masks shared by all facts of a batch.

    ``inputs[s]`` scales the embedding vector fed into slot ``s``; ``hidden``
    scales every entity-position query vector before candidate scoring.
    """

    inputs: list[np.ndarray]
    hidden: np.ndarray | None = None

    @classmethod
    def sample(cls, model: "KBModel", rate: float, rng: np.random.Generator) -> "DropoutMasks | None":
        if rate <= 0.0:
            return None
        keep = 1.0 - rate

        def draw(n: int) -> np.ndarray:
            return (rng.random(n) < keep).astype(np.float64) / keep

        return cls(
            inputs=[draw(d) for d in model.slot_dims],
            hidden=draw(model.query_dim(1)),
        )


def cyclic_rests(mats: Sequence[np.ndarray]) -> list[np.ndarray]:
    """For batched matrices A_0..A_{m-1}, return A_{i+1}...A_{m-1} A_0...A_{i-1} for each i.

    ``d trace(A_0 ... A_{m-1}) / d A_i`` is the transpose of entry ``i``.
    """
    m = len(mats)
    batch = mats[0].shape[0]
    r0 = mats[0].shape[1]
    eye = np.broadcast_to(np.eye(r0), (batch, r0, r0))
    prefix = [eye]
    for a in mats[:-1]:
        prefix.append(prefix[-1] @ a)
    suffix = [None] * m
    suffix[m - 1] = eye
    for i in range(m - 2, -1, -1):
        suffix[i] = mats[i + 1] @ suffix[i + 1]
    return [suffix[i] @ prefix[i] for i in range(m)]


def _contract_axis(t: np.ndarray, v: np.ndarray, axis: int) -> np.ndarray:
    """Contract batched tensor ``t`` (B, ...) along ``axis`` with batched vectors ``v`` (B, d)."""
    moved = np.moveaxis(t, axis, -1)
    batch, d = v.shape
    out = np.matmul(moved.reshape(batch, -1, d), v[:, :, None])
    return out.reshape(moved.shape[:-1])


def _contract_except(t: np.ndarray, vecs: Sequence[np.ndarray | None], keep: int | None) -> np.ndarray:
    """Contract axes 1.. of batched ``t`` with ``vecs`` (one per axis), skipping ``keep``."""
    for axis in range(t.ndim - 1, 0, -1):
        if axis - 1 == keep:
            continue
        t = _contract_axis(t, vecs[axis - 1], axis)
    return t


def _batched_outer(vecs: Sequence[np.ndarray]) -> np.ndarray:
    out = vecs[0]
    for v in vecs[1:]:
        out = out[..., None] * v.reshape(v.shape[0], *([1] * (out.ndim - 1)), v.shape[1])
    return out


def choose_reshape_shape(arity: int, d_e: int, d_r: int, k: int) -> list[int]:
    """Pick the mode sizes of the reshaped core for a ring of ``k`` cores.

    Uses equal mode sizes when ``d_e**arity * d_r`` is a perfect ``k``-th
    power; otherwise keeps ``arity`` modes of size ``d_e`` and splits ``d_r``
    into ``k - arity`` factors, placed first.
    """
    if k < arity + 1:
        raise ConfigurationError(f"ring order k={k} must be >= arity+1={arity + 1}")
    total = d_e**arity * d_r
    root = round(total ** (1.0 / k))
    for cand in (root - 1, root, root + 1):
        if cand >= 1 and cand**k == total:
            return [cand] * k
    split = _split_factors(d_r, k - arity)
    if split is None:
        raise InfeasibleError(
            f"cannot reshape core of {total} elements into {k} modes: attempted "
            f"[{d_r} split into {k - arity} factors > 1] + [{d_e}] * {arity}"
        )
    return split + [d_e] * arity


def _split_factors(x: int, m: int) -> list[int] | None:
    if m == 1:
        return [x]
    target = x ** (1.0 / m)
    divisors = [f for f in range(2, x) if x % f == 0]
    for f in sorted(divisors, key=lambda f: (abs(f - target), f)):
        rest = _split_factors(x // f, m - 1)
        if rest is not None and all(r > 1 for r in rest):
            return [f, *rest]
    return None


def _tucker_groups(reshape_shape: Sequence[int], tucker_shape: Sequence[int]) -> list[tuple[int, int]] | None:
    """Group consecutive reshaped modes so each group covers exactly one Tucker mode."""
    groups, start, acc = [], 0, 1
    for i, n in enumerate(reshape_shape):
        acc *= n
        target = tucker_shape[len(groups)] if len(groups) < len(tucker_shape) else None
        if target is None or acc > target or target % acc:
            return None
        if acc == target:
            groups.append((start, i + 1))
            start, acc = i + 1, 1
    return groups if len(groups) == len(tucker_shape) and start == len(reshape_shape) else None


class KBModel:
    """Shared plumbing for the three model kinds; subclasses define the core contraction."""

    kind: ClassVar[str]
    arity: int

    # -- parameters -------------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def slot_key(self, slot: int) -> str:
        """Name of the parameter matrix whose rows feed slot ``slot``."""
        return "R" if slot == 0 else "E"

    @property
    def n_entities(self) -> int:
        return self.parameters()[self.slot_key(1)].shape[0]

    @property
    def n_relations(self) -> int:
        return self.parameters()["R"].shape[0]

    @property
    def slot_dims(self) -> list[int]:
        p = self.parameters()
        return [p[self.slot_key(s)].shape[1] for s in range(self.arity + 1)]

    def query_dim(self, position: int) -> int:
        return self.slot_dims[position]

    def per_fact_elements(self) -> int:
        """Rough size of the per-fact intermediates of one contraction pass."""
        return max(self.slot_dims)

    def chunk_size(self, budget: int = 4_000_000, limit: int = 512) -> int:
        return max(1, min(limit, budget // max(1, self.per_fact_elements())))

    def copy(self) -> "KBModel":
        return copy.deepcopy(self)

    def header(self) -> dict:
        raise NotImplementedError

    # -- contraction graph (subclass hooks) -------------------------------
    def _begin(self, inputs: list[np.ndarray]):
        raise NotImplementedError

    def _query(self, ctx, position: int) -> np.ndarray:
        raise NotImplementedError

    def _query_backward(self, ctx, position: int, dv: np.ndarray) -> None:
        raise NotImplementedError

    def _end_backward(self, ctx) -> tuple[dict[str, np.ndarray], list[np.ndarray]]:
        """Return (gradients of non-embedding params, gradients of slot inputs)."""
        raise NotImplementedError

    # -- validation --------------------------------------------------------
    def check_facts(self, facts) -> np.ndarray:
        arr = as_fact_array(facts)
        if arr.shape[1] != self.arity + 1:
            raise DimensionError(f"facts have {arr.shape[1] - 1} entities, model arity is {self.arity}")
        if arr.size:
            if arr[:, 0].min() < 0 or arr[:, 0].max() >= self.n_relations:
                raise VocabError(f"relation id outside [0, {self.n_relations})")
            ents = arr[:, 1:]
            if ents.min() < 0 or ents.max() >= self.n_entities:
                raise VocabError(f"entity id outside [0, {self.n_entities})")
        return arr

    def check_position(self, position: int) -> None:
        if not 0 <= position <= self.arity:
            raise IndexError(f"position {position} outside [0, {self.arity}]")


class ContractionPass:
    """One batched forward (and optionally backward) pass over a model.

    >>> p = ContractionPass(model, facts)
    >>> s = p.candidate_scores(1)          # (B, n_entities)
    >>> p.backward_scores(1, ds)           # accumulate d loss / d s
    >>> grads = p.gradients()
    """

    def __init__(self, model: KBModel, facts, masks: DropoutMasks | None = None):
        self.model = model
        self.facts = model.check_facts(facts)
        self.masks = masks
        params = model.parameters()
        self.inputs = []
        for s in range(model.arity + 1):
            x = params[model.slot_key(s)][self.facts[:, s]]
            if masks is not None:
                x = x * masks.inputs[s]
            self.inputs.append(x)
        self.ctx = model._begin(self.inputs)
        self._queries: dict[int, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def _hidden(self, position: int) -> np.ndarray | None:
        if self.masks is None or self.masks.hidden is None or position == 0:
            return None
        return self.masks.hidden

    def query(self, position: int) -> np.ndarray:
        self.model.check_position(position)
        if position not in self._queries:
            v = self.model._query(self.ctx, position)
            h = self._hidden(position)
            self._queries[position] = v if h is None else v * h
        return self._queries[position]

    def candidates(self, position: int) -> np.ndarray:
        return self.model.parameters()[self.model.slot_key(position)]

    def candidate_scores(self, position: int) -> np.ndarray:
        return self.query(position) @ self.candidates(position).T

    def fact_scores(self) -> np.ndarray:
        v = self.query(1)
        rows = self.candidates(1)[self.facts[:, 1]]
        return np.einsum("bd,bd->b", v, rows)

    def _acc(self, key: str, g: np.ndarray) -> None:
        if key in self._grads:
            self._grads[key] += g
        else:
            self._grads[key] = g

    def backward_scores(self, position: int, dscores: np.ndarray) -> None:
        v = self.query(position)
        cand = self.candidates(position)
        self._acc(self.model.slot_key(position), dscores.T @ v)
        dv = dscores @ cand
        h = self._hidden(position)
        if h is not None:
            dv = dv * h
        self.model._query_backward(self.ctx, position, dv)

    def gradients(self) -> dict[str, np.ndarray]:
        """Gradients for every parameter (zeros where untouched)."""
        core_grads, dx = self.model._end_backward(self.ctx)
        for key, g in core_grads.items():
            self._acc(key, g)
        params = self.model.parameters()
        for s, g in enumerate(dx):
            if g is None:
                continue
            if self.masks is not None:
                g = g * self.masks.inputs[s]
            key = self.model.slot_key(s)
            full = np.zeros_like(params[key])
            np.add.at(full, self.facts[:, s], g)
            self._acc(key, full)
        return {k: self._grads.get(k, np.zeros_like(v)) for k, v in params.items()}


# ---------------------------------------------------------------------------
# dense Tucker core (n-TuckER, and GETD when the ring cannot be grouped)
# ---------------------------------------------------------------------------


def _split_point(shape: Sequence[int]) -> int:
    """Slot count ``h`` of the left group that best balances the two core-matrix sides."""
    total = math.prod(shape)
    best, best_h, left = None, 1, 1
    for h in range(1, len(shape)):
        left *= shape[h - 1]
        cost = max(left, total // left)
        if best is None or cost < best:
            best, best_h = cost, h
    return best_h


class _DenseCoreCtx:
    """Batched contractions with a dense core viewed as a (left slots x right slots) matrix.

    Queries and gradients reduce to (B, left) x (left, right) products plus
    small per-fact outer products, so no (B, core size) tensor is formed.
    """

    def __init__(self, core: np.ndarray, inputs: list[np.ndarray]):
        self.core = core
        self.x = inputs
        self.batch = inputs[0].shape[0]
        self.h = h = _split_point(core.shape)
        self.left_shape = core.shape[:h]
        self.right_shape = core.shape[h:]
        self.cmat = core.reshape(math.prod(self.left_shape), -1)
        self.lx = _batched_outer(inputs[:h]).reshape(self.batch, -1)
        self.rx = _batched_outer(inputs[h:]).reshape(self.batch, -1)
        self._tl = self._tr = None
        self.dv: dict[int, np.ndarray] = {}

    @property
    def tl(self) -> np.ndarray:
        # left slots contracted: (B, *right_shape)
        if self._tl is None:
            self._tl = (self.lx @ self.cmat).reshape(self.batch, *self.right_shape)
        return self._tl

    @property
    def tr(self) -> np.ndarray:
        # right slots contracted: (B, *left_shape)
        if self._tr is None:
            self._tr = (self.rx @ self.cmat.T).reshape(self.batch, *self.left_shape)
        return self._tr

    def query(self, position: int) -> np.ndarray:
        h = self.h
        if position < h:
            return _contract_except(self.tr, self.x[:h], keep=position)
        return _contract_except(self.tl, self.x[h:], keep=position - h)

    def backward(self, position: int, dv: np.ndarray) -> None:
        self.dv[position] = self.dv[position] + dv if position in self.dv else dv

    def _swapped(self, lo: int, hi: int, p: int) -> list[np.ndarray]:
        vecs = list(self.x[lo:hi])
        vecs[p - lo] = self.dv[p]
        return vecs

    def finish(self) -> tuple[np.ndarray, list[np.ndarray | None]]:
        h, n_slots, B = self.h, len(self.x), self.batch
        left_ps = [p for p in self.dv if p < h]
        right_ps = [p for p in self.dv if p >= h]
        dx: list[np.ndarray | None] = [None] * n_slots

        def acc(s, g):
            dx[s] = g if dx[s] is None else dx[s] + g

        lhs, rhs = [], []
        if right_ps:
            d_r = sum(_batched_outer(self._swapped(h, n_slots, p)).reshape(B, -1) for p in right_ps)
            lhs.append(self.lx)
            rhs.append(d_r)
            s_r = (d_r @ self.cmat.T).reshape(B, *self.left_shape)
            for s in range(h):
                acc(s, _contract_except(s_r, self.x[:h], keep=s))
            for p in right_ps:
                for s in range(h, n_slots):
                    if s != p:
                        acc(s, _contract_except(self.tl, self._swapped(h, n_slots, p), keep=s - h))
        if left_ps:
            d_l = sum(_batched_outer(self._swapped(0, h, p)).reshape(B, -1) for p in left_ps)
            lhs.append(d_l)
            rhs.append(self.rx)
            s_l = (d_l @ self.cmat).reshape(B, *self.right_shape)
            for s in range(h, n_slots):
                acc(s, _contract_except(s_l, self.x[h:], keep=s - h))
            for p in left_ps:
                for s in range(h):
                    if s != p:
                        acc(s, _contract_except(self.tr, self._swapped(0, h, p), keep=s))
        if lhs:
            dcore = (np.concatenate(lhs).T @ np.concatenate(rhs)).reshape(self.core.shape)
        else:
            dcore = np.zeros_like(self.core)
        return dcore, dx


class NTuckerModel(KBModel):
    """Shared entity matrix ``E``, relation matrix ``R`` and a dense (n+1)-order core ``W``."""

    kind = "ntucker"

    def __init__(self, E: np.ndarray, R: np.ndarray, W: np.ndarray):
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.R = np.ascontiguousarray(R, dtype=np.float64)
        self.W = tc.as_tensor(W)
        self.arity = self.W.ndim - 1
        if self.arity < 1:
            raise DimensionError("core must have order >= 2")
        d_e, d_r = self.E.shape[1], self.R.shape[1]
        if self.W.shape != (d_r, *[d_e] * self.arity):
            raise DimensionError(f"core shape {self.W.shape} inconsistent with d_r={d_r}, d_e={d_e}")

    def parameters(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "R": self.R, "W": self.W}

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "arity": self.arity,
            "n_e": self.E.shape[0],
            "n_r": self.R.shape[0],
            "d_e": self.E.shape[1],
            "d_r": self.R.shape[1],
        }

    def per_fact_elements(self) -> int:
        return self.W[0].size

    def _begin(self, inputs):
        return _DenseCoreCtx(self.W, inputs)

    def _query(self, ctx, position):
        return ctx.query(position)

    def _query_backward(self, ctx, position, dv):
        ctx.backward(position, dv)

    def _end_backward(self, ctx):
        dcore, dx = ctx.finish()
        return {"W": dcore}, dx


# ---------------------------------------------------------------------------
# GETD
# ---------------------------------------------------------------------------


class _RingCtx:
    """Grouped ring path: each Tucker slot owns a run of consecutive ring cores."""

    def __init__(self, model: "GetdModel", inputs: list[np.ndarray]):
        self.cores = model.cores
        self.groups = model.groups
        self.merged = [tc.chain_merge(self.cores[a:b]) for a, b in self.groups]
        self.x = inputs
        self.mats = [np.einsum("bj,ajc->bac", x, y) for x, y in zip(inputs, self.merged)]
        self.rests = cyclic_rests(self.mats)
        self.dmats = [np.zeros_like(m) for m in self.mats]
        self.dmerged = [np.zeros_like(y) for y in self.merged]

    def query(self, position: int) -> np.ndarray:
        return np.einsum("acd,bda->bc", self.merged[position], self.rests[position])

    def backward(self, position: int, dv: np.ndarray) -> None:
        self.dmerged[position] += np.einsum("bc,bda->acd", dv, self.rests[position])
        replaced = list(self.mats)
        replaced[position] = np.einsum("bc,acd->bad", dv, self.merged[position])
        rests = cyclic_rests(replaced)
        for i, rest in enumerate(rests):
            if i != position:
                self.dmats[i] += np.swapaxes(rest, 1, 2)

    def finish(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        dx = []
        for i, (x, y, dm) in enumerate(zip(self.x, self.merged, self.dmats)):
            dx.append(np.einsum("bac,ajc->bj", dm, y))
            self.dmerged[i] += np.einsum("bj,bac->ajc", x, dm)
        dcores = []
        for (a, b), dy in zip(self.groups, self.dmerged):
            dcores.extend(tc.chain_merge_backward(self.cores[a:b], dy))
        return dcores, dx


class _MaterializedCtx(_DenseCoreCtx):
    def __init__(self, model: "GetdModel", inputs: list[np.ndarray]):
        self.ring = model.ring
        super().__init__(model.materialize_core(), inputs)


class GetdModel(KBModel):
    """Tucker scoring whose core is the reshaped tensor ring ``TR(Z_1..Z_k)``.

    Parameters
    ----------
    arity : int
        Number of entity slots ``n``.
    E, R : ndarray
        Entity (n_e, d_e) and relation (n_r, d_r) embeddings.
    cores : sequence of ndarray
        Ring cores, core ``i`` of shape (r_i, n_i, r_{i+1}) with
        ``prod(n_i) == d_e**arity * d_r``.
    materialize : bool or None
        ``True`` forces the dense-core route (materialize ``W`` once per
        batch), ``False`` the grouped-ring route, ``None`` picks the cheaper
        one. The ring route needs every Tucker mode to be covered by a run of
        consecutive ring modes. Both routes give identical scores.
    """

    kind = "getd"

    def __init__(self, arity: int, E: np.ndarray, R: np.ndarray, cores: Sequence[np.ndarray], materialize: bool | None = None):
        self.arity = int(arity)
        self.E = np.ascontiguousarray(E, dtype=np.float64)
        self.R = np.ascontiguousarray(R, dtype=np.float64)
        self.cores = [tc.as_tensor(c) for c in cores]
        self.materialize = materialize
        ring = tc.TensorRing(self.cores)
        k = ring.order
        if k < self.arity + 1:
            raise ConfigurationError(f"ring order k={k} must be >= arity+1={self.arity + 1}")
        d_e, d_r = self.E.shape[1], self.R.shape[1]
        if math.prod(ring.dims) != d_e**self.arity * d_r:
            raise DimensionError(
                f"ring mode sizes {ring.dims} multiply to {math.prod(ring.dims)}, "
                f"expected d_e^n*d_r = {d_e**self.arity * d_r}"
            )

    @property
    def ring(self) -> tc.TensorRing:
        return tc.TensorRing(self.cores)

    @property
    def reshape_shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def tucker_shape(self) -> tuple[int, ...]:
        return (self.R.shape[1], *[self.E.shape[1]] * self.arity)

    @property
    def groups(self) -> list[tuple[int, int]] | None:
        """Ring-core runs per Tucker slot, or None when the dense route is used."""
        if self.materialize:
            return None
        groups = _tucker_groups(self.reshape_shape, self.tucker_shape)
        if groups is None or self.materialize is False:
            return groups
        n_core = math.prod(self.reshape_shape)
        r = max(self.ranks)
        if n_core > tc.get_materialization_cap():
            return groups
        # flops for a nominal batch of 128 facts
        dense_cost = r * r * n_core + 128 * n_core
        ring_cost = 128 * 3 * len(self.cores) * r**3
        return None if dense_cost < ring_cost else groups

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"E": self.E, "R": self.R}
        params.update({f"Z{i}": c for i, c in enumerate(self.cores)})
        return params

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "arity": self.arity,
            "n_e": self.E.shape[0],
            "n_r": self.R.shape[0],
            "d_e": self.E.shape[1],
            "d_r": self.R.shape[1],
            "k": len(self.cores),
            "ranks": list(self.ranks),
            "reshape_shape": list(self.reshape_shape),
        }

    def per_fact_elements(self) -> int:
        if self.groups is None:
            return math.prod(self.tucker_shape[1:])
        return 4 * len(self.cores) * max(self.ranks) ** 2

    def materialize_core(self, cap: int | None = None) -> np.ndarray:
        """The Tucker core ``W`` of shape [d_r, d_e, ..., d_e] (reshaped ring)."""
        tc.check_capacity(self.tucker_shape, cap, "GETD core")
        return tc.reshape(tc.tr_reconstruct(self.ring, cap), self.tucker_shape)

    def to_ntucker(self) -> NTuckerModel:
        return NTuckerModel(self.E.copy(), self.R.copy(), self.materialize_core())

    def _begin(self, inputs):
        if self.groups is None:
            return _MaterializedCtx(self, inputs)
        return _RingCtx(self, inputs)

    def _query(self, ctx, position):
        return ctx.query(position)

    def _query_backward(self, ctx, position, dv):
        ctx.backward(position, dv)

    def _end_backward(self, ctx):
        if isinstance(ctx, _MaterializedCtx):
            dcore, dx = ctx.finish()
            dcores = tc.tr_reconstruct_backward(ctx.ring, dcore.reshape(self.reshape_shape))
        else:
            dcores, dx = ctx.finish()
        return {f"Z{i}": g for i, g in enumerate(dcores)}, dx


# ---------------------------------------------------------------------------
# n-CP
# ---------------------------------------------------------------------------


class _CpCtx:
    def __init__(self, inputs):
        self.x = inputs
        self.dx = [np.zeros_like(x) for x in inputs]

    def _prod(self, skip: set[int]) -> np.ndarray:
        out = np.ones_like(self.x[0])
        for s, x in enumerate(self.x):
            if s not in skip:
                out = out * x
        return out


class NCpModel(KBModel):
    """Relation matrix ``R`` and one entity matrix per position, all with ``d`` columns."""

    kind = "ncp"

    def __init__(self, R: np.ndarray, entity_matrices: Sequence[np.ndarray]):
        self.R = np.ascontiguousarray(R, dtype=np.float64)
        self.Es = [np.ascontiguousarray(e, dtype=np.float64) for e in entity_matrices]
        self.arity = len(self.Es)
        if self.arity < 1:
            raise DimensionError("n-CP needs at least one entity position")
        d = self.R.shape[1]
        n_e = self.Es[0].shape[0]
        for i, e in enumerate(self.Es):
            if e.shape != (n_e, d):
                raise DimensionError(f"entity matrix {i + 1} has shape {e.shape}, expected ({n_e}, {d})")

    def slot_key(self, slot: int) -> str:
        return "R" if slot == 0 else f"E{slot}"

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"R": self.R}
        params.update({f"E{i + 1}": e for i, e in enumerate(self.Es)})
        return params

    def header(self) -> dict:
        d = self.R.shape[1]
        return {
            "kind": self.kind,
            "arity": self.arity,
            "n_e": self.Es[0].shape[0],
            "n_r": self.R.shape[0],
            "d_e": d,
            "d_r": d,
        }

    def _begin(self, inputs):
        return _CpCtx(inputs)

    def _query(self, ctx, position):
        return ctx._prod({position})

    def _query_backward(self, ctx, position, dv):
        for s in range(len(ctx.x)):
            if s != position:
                ctx.dx[s] += dv * ctx._prod({s, position})

    def _end_backward(self, ctx):
        return {}, ctx.dx


# ---------------------------------------------------------------------------
# public scoring API
# ---------------------------------------------------------------------------


def score(m: KBModel, facts) -> np.ndarray:
    """Scores of a batch of facts (1-D array)."""
    facts = m.check_facts(facts)
    step = m.chunk_size()
    parts = [ContractionPass(m, facts[i : i + step]).fact_scores() for i in range(0, len(facts), step)]
    return np.concatenate(parts) if parts else np.zeros(0)


def _score_one(m: KBModel, f, kind: type) -> float:
    if not isinstance(m, kind):
        raise TypeError(f"expected {kind.__name__}, got {type(m).__name__}")
    return float(score(m, f)[0])


def score_getd(m: GetdModel, f) -> float:
    return _score_one(m, f, GetdModel)


def score_ntucker(m: NTuckerModel, f) -> float:
    return _score_one(m, f, NTuckerModel)


def score_ncp(m: NCpModel, f) -> float:
    return _score_one(m, f, NCpModel)


def score_all(m: KBModel, f, position: int) -> np.ndarray:
    """Scores of ``f`` with slot ``position`` replaced by every candidate id."""
    m.check_position(position)
    return ContractionPass(m, f).candidate_scores(position)[0]


# ---------------------------------------------------------------------------
# construction and accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamCount:
    embedding_params: int
    core_params: int

    @property
    def total(self) -> int:
        return self.embedding_params + self.core_params

    def as_dict(self) -> dict:
        return {
            "embedding_params": self.embedding_params,
            "core_params": self.core_params,
            "total": self.total,
        }


def _normalize_ranks(ranks, k: int) -> list[int]:
    if isinstance(ranks, (int, np.integer)):
        return [int(ranks)] * k
    ranks = [int(r) for r in ranks]
    if len(ranks) == 1:
        return ranks * k
    if len(ranks) != k:
        raise ConfigurationError(f"{len(ranks)} ranks given for a ring of {k} cores")
    return ranks


def param_shapes(
    kind: str,
    arity: int,
    n_e: int,
    n_r: int,
    d_e: int,
    d_r: int | None = None,
    k: int | None = None,
    ranks=None,
    reshape_shape: Sequence[int] | None = None,
) -> dict[str, tuple[int, ...]]:
    """Shapes of every parameter array, without allocating them."""
    d_r = d_e if d_r is None else d_r
    if min(n_e, n_r) < 1:
        raise ConfigurationError(f"empty vocabulary: n_e={n_e}, n_r={n_r}")
    if min(d_e, d_r, arity) < 1:
        raise ConfigurationError("dimensions and arity must be positive")
    if kind == "ncp":
        if d_r != d_e:
            raise ConfigurationError("n-CP uses one dimensionality for relations and entities")
        return {"R": (n_r, d_e), **{f"E{i + 1}": (n_e, d_e) for i in range(arity)}}
    if kind == "ntucker":
        return {"E": (n_e, d_e), "R": (n_r, d_r), "W": (d_r, *[d_e] * arity)}
    if kind == "getd":
        if reshape_shape is None:
            k = arity + 1 if k is None else k
            reshape_shape = choose_reshape_shape(arity, d_e, d_r, k)
        reshape_shape = [int(n) for n in reshape_shape]
        k = len(reshape_shape)
        if math.prod(reshape_shape) != d_e**arity * d_r:
            raise ConfigurationError(
                f"reshape {reshape_shape} has {math.prod(reshape_shape)} elements, "
                f"expected {d_e**arity * d_r}"
            )
        if k < arity + 1:
            raise ConfigurationError(f"ring order k={k} must be >= arity+1={arity + 1}")
        rs = _normalize_ranks(reshape_shape[0] if ranks is None else ranks, k)
        shapes = {"E": (n_e, d_e), "R": (n_r, d_r)}
        shapes.update({f"Z{i}": (rs[i], reshape_shape[i], rs[(i + 1) % k]) for i in range(k)})
        return shapes
    raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def _count(shapes: dict[str, tuple[int, ...]]) -> ParamCount:
    emb = core = 0
    for key, shape in shapes.items():
        size = math.prod(shape)
        if key in ("E", "R") or (key.startswith("E") and key[1:].isdigit()):
            emb += size
        else:
            core += size
    return ParamCount(emb, core)


def param_count(m: KBModel) -> ParamCount:
    return _count({k: v.shape for k, v in m.parameters().items()})


def param_count_for(kind: str, **kwargs) -> ParamCount:
    return _count(param_shapes(kind, **kwargs))


def init_model(
    kind: str,
    n_e: int,
    n_r: int,
    d_e: int,
    d_r: int | None = None,
    k: int | None = None,
    ranks=None,
    seed: int = 0,
    arity: int = 2,
    reshape_shape: Sequence[int] | None = None,
    embedding_std: float = 0.1,
) -> KBModel:
    """Randomly initialise a model; deterministic in ``seed``.

    Embeddings are drawn from N(0, embedding_std**2); ring cores from
    N(0, 1/r_max); a dense n-TuckER core from N(0, 1).
    """
    shapes = param_shapes(kind, arity=arity, n_e=n_e, n_r=n_r, d_e=d_e, d_r=d_r, k=k, ranks=ranks, reshape_shape=reshape_shape)
    rng = np.random.default_rng(seed)
    if kind == "ncp":
        R = rng.normal(0.0, embedding_std, shapes["R"])
        Es = [rng.normal(0.0, embedding_std, shapes[f"E{i + 1}"]) for i in range(arity)]
        return NCpModel(R, Es)
    E = rng.normal(0.0, embedding_std, shapes["E"])
    R = rng.normal(0.0, embedding_std, shapes["R"])
    if kind == "ntucker":
        return NTuckerModel(E, R, rng.normal(0.0, 1.0, shapes["W"]))
    core_shapes = [shapes[f"Z{i}"] for i in range(len(shapes) - 2)]
    r_max = max(s[0] for s in core_shapes)
    cores = [rng.normal(0.0, 1.0 / math.sqrt(r_max), s) for s in core_shapes]
    return GetdModel(arity, E, R, cores)


def model_from_arrays(header: dict, arrays: dict[str, np.ndarray]) -> KBModel:
    """Rebuild a model from its header and named parameter arrays."""
    kind = header["kind"]
    if kind == "ntucker":
        return NTuckerModel(arrays["E"], arrays["R"], arrays["W"])
    if kind == "ncp":
        return NCpModel(arrays["R"], [arrays[f"E{i + 1}"] for i in range(header["arity"])])
    if kind == "getd":
        cores = [arrays[f"Z{i}"] for i in range(header["k"])]
        return GetdModel(header["arity"], arrays["E"], arrays["R"], cores)
    raise ConfigurationError(f"unknown model kind {kind!r}")
