"""Exact models that reproduce an arbitrary binary KB tensor.

Entities and relations get one-hot embeddings (d_e = n_e, d_r = n_r). The
n-TuckER core is the KB tensor itself; for GETD the (reshaped) tensor is
written as a sum of one-hot rank-one terms and that CP form is turned into a
tensor ring with diagonal lateral slices.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .errors import DomainError
from .models import GetdModel, NTuckerModel, choose_reshape_shape


def _check_binary(t: np.ndarray) -> np.ndarray:
    t = tc.as_tensor(t)
    if not np.all((t == 0) | (t == 1)):
        raise DomainError("tensor must be binary (entries 0 or 1)")
    return t


def construct_ntucker_exact(T: np.ndarray) -> NTuckerModel:
    """One-hot embeddings with the KB tensor ``T`` [n_r, n_e, ...] as core."""
    T = _check_binary(T)
    if T.ndim < 2 or len(set(T.shape[1:])) != 1:
        raise DomainError(f"KB tensor must have shape [n_r, n_e, ..., n_e], got {T.shape}")
    n_r, n_e = T.shape[0], T.shape[1]
    return NTuckerModel(np.eye(n_e), np.eye(n_r), T.copy())


def cp_decompose_binary(W: np.ndarray, literal: bool = False) -> tc.CpFactors:
    """Exact CP form of a binary tensor, one one-hot component per nonzero entry.

    With ``literal=True`` there is one component per tensor entry
    (rank ``prod(W.shape)``), zero vectors for zero entries.
    """
    W = _check_binary(W)
    if literal:
        indices = list(itertools.product(*(range(n) for n in W.shape)))
    else:
        indices = [tuple(i) for i in np.argwhere(W == 1)]
    rank = max(1, len(indices))
    factors = [np.zeros((n, rank)) for n in W.shape]
    for r, idx in enumerate(indices):
        w = W[idx]
        for mode, j in enumerate(idx):
            factors[mode][j, r] = w
    return tc.CpFactors(factors)


def cp_to_tr(c: tc.CpFactors) -> tc.TensorRing:
    """Ring with lateral slices ``Z_i[:, j, :] = diag(u^(i)(j))`` over the rank components."""
    cores = []
    for f in c.factors:
        core = np.zeros((c.rank, f.shape[0], c.rank))
        idx = np.arange(c.rank)
        core[idx, :, idx] = f.T
        cores.append(core)
    if len(cores) == 1:
        raise DomainError("a tensor ring needs at least two modes")
    return tc.TensorRing(cores)


def construct_getd_exact(
    T: np.ndarray,
    k: int | None = None,
    reshape_shape: Sequence[int] | None = None,
    literal: bool = False,
    cap: int | None = None,
) -> GetdModel:
    """GETD model whose scores equal the binary KB tensor ``T`` at every index.

    The core ``T`` is reshaped to ``k`` modes (default ``arity + 1``, i.e. no
    reshape), decomposed into one-hot rank-one terms, and converted to a ring.
    """
    T = _check_binary(T)
    ntucker = construct_ntucker_exact(T)
    arity = ntucker.arity
    n_r, n_e = T.shape[0], T.shape[1]
    if reshape_shape is None:
        if k is None or k == arity + 1:
            reshape_shape = T.shape
        else:
            reshape_shape = choose_reshape_shape(arity, n_e, n_r, k)
    W_hat = tc.reshape(T, reshape_shape)
    ring = cp_to_tr(cp_decompose_binary(W_hat, literal=literal))
    tc.check_capacity((ring.size,), cap, "exact ring cores")
    return GetdModel(arity, ntucker.E, ntucker.R, ring.cores)
