"""Dense tensor kernels: mode products, Tucker/CP/tensor-ring reconstruction.

Dense tensors are plain C-ordered (row-major, last index fastest) float64
``numpy.ndarray`` values. Modes are indexed from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, DimensionError

DEFAULT_MATERIALIZATION_CAP = 10**7

_cap = DEFAULT_MATERIALIZATION_CAP


def get_materialization_cap() -> int:
    return _cap


def set_materialization_cap(n_elements: int) -> int:
    """Set the global dense-materialization cap; returns the previous value."""
    global _cap
    if n_elements < 1:
        raise ValueError("materialization cap must be positive")
    previous, _cap = _cap, int(n_elements)
    return previous


def check_capacity(shape: Sequence[int], cap: int | None = None, what: str = "tensor") -> None:
    allowed = _cap if cap is None else cap
    required = math.prod(int(s) for s in shape)
    if required > allowed:
        raise CapacityError(
            f"materializing {what} of shape {tuple(shape)} needs {required} elements, "
            f"cap allows {allowed}"
        )


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Coerce ``data`` to a row-major float64 tensor, optionally tagging a shape.

    A flat ``data`` with an explicit ``shape`` is laid out in row-major order.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise DimensionError(f"mode sizes must be >= 1, got {shape}")
        if arr.size != math.prod(shape):
            raise DimensionError(
                f"data length {arr.size} does not match shape {shape} "
                f"({math.prod(shape)} elements)"
            )
        arr = arr.reshape(shape)
    return arr


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    """Reinterpret the row-major flat data of ``t`` under ``new_shape``."""
    t = as_tensor(t)
    new_shape = tuple(int(s) for s in new_shape)
    if any(s < 1 for s in new_shape):
        raise DimensionError(f"mode sizes must be >= 1, got {new_shape}")
    if math.prod(new_shape) != t.size:
        raise DimensionError(
            f"cannot reshape {t.shape} ({t.size} elements) to {new_shape} "
            f"({math.prod(new_shape)} elements)"
        )
    return t.reshape(new_shape)


def mode_product(t: np.ndarray, v: np.ndarray, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``t`` with vector ``v`` (the mode is removed)."""
    t = as_tensor(t)
    v = np.asarray(v, dtype=np.float64)
    if not 0 <= mode < t.ndim:
        raise DimensionError(f"mode {mode} out of range for order-{t.ndim} tensor")
    if v.ndim != 1 or v.shape[0] != t.shape[mode]:
        raise DimensionError(
            f"mode {mode} has size {t.shape[mode]} but vector has length {v.shape}"
        )
    # copy(order="C") keeps the 0-d result of contracting a vector
    return np.tensordot(t, v, axes=([mode], [0])).copy(order="C")


def tucker_reconstruct(core: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Compute ``core x_1 A1 x_2 A2 ... x_n An`` with ``Ai`` of shape (I_i, J_i)."""
    core = as_tensor(core)
    if len(factors) != core.ndim:
        raise DimensionError(f"{len(factors)} factors given for order-{core.ndim} core")
    out = core
    for mode, a in enumerate(factors):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != core.shape[mode]:
            raise DimensionError(
                f"factor {mode} has shape {a.shape}, expected (*, {core.shape[mode]})"
            )
        # tensordot puts the new axis last; move it back into place
        out = np.moveaxis(np.tensordot(out, a, axes=([mode], [1])), -1, mode)
    return np.ascontiguousarray(out)


def multilinear_dot(vs: Sequence[np.ndarray]) -> float:
    """Sum over i of the product of ``vs[j][i]`` across all vectors."""
    if len(vs) == 0:
        raise DimensionError("multilinear_dot needs at least one vector")
    arrs = [np.asarray(v, dtype=np.float64) for v in vs]
    length = arrs[0].shape
    for a in arrs:
        if a.ndim != 1 or a.shape != length:
            raise DimensionError(f"vector lengths differ: {[x.shape for x in arrs]}")
    return float(np.sum(np.prod(np.stack(arrs), axis=0)))


@dataclass(frozen=True)
class TensorRing:
    """Circular chain of third-order cores ``Z_i`` of shape (r_i, n_i, r_{i+1})."""

    cores: tuple[np.ndarray, ...]

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = tuple(as_tensor(c) for c in cores)
        if len(cores) < 2:
            raise DimensionError(f"a tensor ring needs at least 2 cores, got {len(cores)}")
        for i, c in enumerate(cores):
            if c.ndim != 3:
                raise DimensionError(f"core {i} must be third-order, got shape {c.shape}")
        for i, c in enumerate(cores):
            nxt = cores[(i + 1) % len(cores)]
            if c.shape[2] != nxt.shape[0]:
                raise DimensionError(
                    f"rank mismatch between core {i} (right rank {c.shape[2]}) and "
                    f"core {(i + 1) % len(cores)} (left rank {nxt.shape[0]})"
                )
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def size(self) -> int:
        return sum(c.size for c in self.cores)


def tr_element(ring: TensorRing, index: Sequence[int]) -> float:
    """``trace(Z_1[:, i_1, :] @ ... @ Z_k[:, i_k, :])``, evaluated left to right."""
    if len(index) != ring.order:
        raise DimensionError(f"index of length {len(index)} for ring of order {ring.order}")
    for mode, (i, n) in enumerate(zip(index, ring.dims)):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range [0, {n}) in mode {mode}")
    prod = ring.cores[0][:, index[0], :]
    for core, i in zip(ring.cores[1:], index[1:]):
        prod = prod @ core[:, i, :]
    return float(np.trace(prod))


def chain_merge(cores: Sequence[np.ndarray]) -> np.ndarray:
    """Open-chain product of cores: shape (r_first, prod(n_i), r_last)."""
    out = cores[0]
    for c in cores[1:]:
        r0, m, _ = out.shape
        out = (out.reshape(r0 * m, -1) @ c.reshape(c.shape[0], -1)).reshape(
            r0, m * c.shape[1], c.shape[2]
        )
    return out


def chain_merge_backward(cores: Sequence[np.ndarray], grad: np.ndarray) -> list[np.ndarray]:
    """Gradients w.r.t. each core given ``grad`` of ``chain_merge(cores)``."""
    if len(cores) == 1:
        return [grad.reshape(cores[0].shape).copy()]
    grads = []
    dims = [c.shape[1] for c in cores]
    r_first, r_last = cores[0].shape[0], cores[-1].shape[2]
    for i, core in enumerate(cores):
        n_left, n_right = math.prod(dims[:i]), math.prod(dims[i + 1 :])
        g = grad.reshape(r_first, n_left, dims[i], n_right, r_last)
        if i > 0:
            left = chain_merge(cores[:i])  # (r_first, n_left, r_i)
            g = np.einsum("alx,aljrb->xjrb", left, g)
        else:
            g = g.reshape(r_first, dims[0], n_right, r_last)
        if i < len(cores) - 1:
            right = chain_merge(cores[i + 1 :])  # (r_{i+1}, n_right, r_last)
            g = np.einsum("xjrb,yrb->xjy", g, right)
        else:
            g = g.reshape(core.shape)
        grads.append(g)
    return grads


def tr_reconstruct(ring: TensorRing, cap: int | None = None) -> np.ndarray:
    """Materialize the full tensor represented by ``ring``."""
    check_capacity(ring.dims, cap, "tensor ring")
    merged = chain_merge(ring.cores)
    return np.ascontiguousarray(np.einsum("aia->i", merged).reshape(ring.dims))


def tr_reconstruct_backward(ring: TensorRing, grad: np.ndarray) -> list[np.ndarray]:
    """Core gradients given ``grad`` of ``tr_reconstruct(ring)`` (same shape as it)."""
    r = ring.ranks[0]
    g = grad.reshape(-1)
    merged_grad = np.einsum("i,ab->aib", g, np.eye(r))
    return chain_merge_backward(ring.cores, merged_grad)


@dataclass(frozen=True)
class CpFactors:
    """Rank-``rank`` CP model; ``factors[i]`` has shape (n_i, rank), column r is u_r^(i)."""

    factors: tuple[np.ndarray, ...]

    def __init__(self, factors: Sequence[np.ndarray]):
        factors = tuple(np.ascontiguousarray(f, dtype=np.float64) for f in factors)
        if not factors:
            raise DimensionError("CP factors need at least one mode")
        rank = factors[0].shape[1] if factors[0].ndim == 2 else -1
        for i, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != rank or f.shape[0] < 1:
                raise DimensionError(
                    f"factor {i} has shape {f.shape}; every factor must be (n_i, {rank})"
                )
        if rank < 1:
            raise DimensionError("CP rank must be >= 1")
        object.__setattr__(self, "factors", factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)


def cp_reconstruct(c: CpFactors, cap: int | None = None) -> np.ndarray:
    check_capacity(c.dims, cap, "CP tensor")
    out = c.factors[0]
    for f in c.factors[1:]:
        out = np.einsum("ir,jr->ijr", out.reshape(-1, c.rank), f).reshape(-1, c.rank)
    return np.ascontiguousarray(out.sum(axis=1).reshape(c.dims))
