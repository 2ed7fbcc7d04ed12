"""Masked attention primitives: packed sparse kernels and the dense oracle.

The packed form follows the neighbor-list layout of ``PackedMask``: keys and
values are gathered into n x m blocks, logits for padded slots are set to
-inf before the row softmax, and the weighted sum runs over the m slots only,
so a full pass costs n*m*d multiply-accumulates instead of n*n*d.

Two backends implement the packed kernels: numba (default when importable)
and pure numpy.  Select with the ``GSDM_BACKEND`` environment variable
(``auto``/``numba``/``numpy``) or ``use_backend``; both produce the same
values to float tolerance, and each is bitwise deterministic.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from ..masks import AttentionMask, PackedMask
from .tensor import Tensor, make_op

try:
    from . import _kernels

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels = None
    _HAVE_NUMBA = False


# ------------------------------------------------------------------- backend
def _resolve(name: str) -> str:
    if name == "auto":
        return "numba" if _HAVE_NUMBA else "numpy"
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    return name


_BACKEND = _resolve(os.environ.get("GSDM_BACKEND", "auto"))


def current_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    _BACKEND = _resolve(name)


@contextmanager
def use_backend(name: str):
    old = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


# ---------------------------------------------------------------- op counter
class OpCounter:
    """Multiply-accumulate counter for the attention passes.

    Disabled by default; when enabled, every logit/value pass adds its exact
    scalar MAC count, keyed by pass name.  Used by the complexity benchmark.
    """

    def __init__(self):
        self.enabled = False
        self.counts: dict[str, int] = {}

    def reset(self) -> None:
        self.counts = {}

    def add(self, key: str, macs: int) -> None:
        if self.enabled:
            self.counts[key] = self.counts.get(key, 0) + int(macs)

    def total(self) -> int:
        return sum(self.counts.values())


op_counter = OpCounter()


@contextmanager
def count_ops():
    op_counter.enabled = True
    op_counter.reset()
    try:
        yield op_counter
    finally:
        op_counter.enabled = False


# ------------------------------------------------------------- packed kernels
def _packed_fwd_numpy(Q, K, V, nbr, pad, scale):
    Kbar = K[:, nbr, :]  # fancy indexing copies, safe to zero in place
    Vbar = V[:, nbr, :]
    Kbar[:, pad] = 0.0
    Vbar[:, pad] = 0.0
    U = np.einsum("bnd,bnmd->bnm", Q, Kbar, optimize=True) * Q.dtype.type(scale)
    U[:, pad] = -np.inf
    U = U - U.max(axis=-1, keepdims=True)
    W = np.exp(U)
    W = W / W.sum(axis=-1, keepdims=True)
    O = np.einsum("bnm,bnmd->bnd", W, Vbar, optimize=True)
    return O, W


def _packed_bwd_numpy(g, Q, K, V, nbr, pad, W, scale):
    B, n, d = Q.shape
    m = nbr.shape[1]
    Kbar = K[:, nbr, :]
    Vbar = V[:, nbr, :]
    dW = np.einsum("bnd,bnmd->bnm", g, Vbar, optimize=True)
    s = (W * dW).sum(axis=-1, keepdims=True)
    dU = W * (dW - s) * Q.dtype.type(scale)
    dQ = np.einsum("bnm,bnmd->bnd", dU, Kbar, optimize=True)
    dKbar = dU[..., None] * Q[:, :, None, :]
    dVbar = W[..., None] * g[:, :, None, :]
    dKbar[:, pad] = 0.0
    dVbar[:, pad] = 0.0
    dK = np.zeros_like(K)
    dV = np.zeros_like(V)
    rows = np.arange(B)[:, None]
    flat = nbr.reshape(-1)[None, :]
    np.add.at(dK, (rows, flat), dKbar.reshape(B, n * m, d))
    np.add.at(dV, (rows, flat), dVbar.reshape(B, n * m, d))
    return dQ, dK, dV


def _packed_fwd_numba(Q, K, V, nbr, cnt, scale):
    B, n, d = Q.shape
    m = nbr.shape[1]
    W = np.empty((B, n, m), dtype=Q.dtype)
    O = np.empty((B, n, d), dtype=Q.dtype)
    _kernels.packed_attn_fwd(Q, K, V, nbr, cnt, Q.dtype.type(scale), W, O)
    return O, W


def _packed_bwd_numba(g, Q, K, V, nbr, cnt, W, scale):
    dQ = np.zeros_like(Q)
    dK = np.zeros_like(K)
    dV = np.zeros_like(V)
    scratch = np.empty(nbr.shape[1], dtype=Q.dtype)
    _kernels.packed_attn_bwd(
        np.ascontiguousarray(g), Q, K, V, nbr, cnt, W, Q.dtype.type(scale), dQ, dK, dV, scratch
    )
    return dQ, dK, dV


def packed_attention(Q: Tensor, K: Tensor, V: Tensor, packed: PackedMask, scale: bool = True) -> Tensor:
    """Sparse masked attention over (B, n, d) inputs via neighbor lists.

    Equals dense softmax attention restricted to the mask's allowed entries;
    logit scaling by 1/sqrt(d) is on by default.
    """
    B, n, d = Q.data.shape
    if n != packed.n or K.data.shape != Q.data.shape or V.data.shape != Q.data.shape:
        raise ValueError(f"shape mismatch: Q {Q.data.shape}, K {K.data.shape}, V {V.data.shape}, mask n={packed.n}")
    sc = 1.0 / np.sqrt(d) if scale else 1.0
    op_counter.add("packed_logits", B * n * packed.m * d)
    op_counter.add("packed_values", B * n * packed.m * d)
    qd, kd, vd = (np.ascontiguousarray(t.data) for t in (Q, K, V))
    if _BACKEND == "numba":
        O, W = _packed_fwd_numba(qd, kd, vd, packed.neighbors, packed.counts, sc)
    else:
        O, W = _packed_fwd_numpy(qd, kd, vd, packed.neighbors, packed.pad_flags, sc)

    def vjp(g):
        if _BACKEND == "numba":
            dQ, dK, dV = _packed_bwd_numba(g, qd, kd, vd, packed.neighbors, packed.counts, W, sc)
        else:
            dQ, dK, dV = _packed_bwd_numpy(g, qd, kd, vd, packed.neighbors, packed.pad_flags, W, sc)
        from .tensor import _accumulate

        _accumulate(Q, dQ)
        _accumulate(K, dK)
        _accumulate(V, dV)

    return make_op(O, (Q, K, V), vjp)


# --------------------------------------------------------------- dense oracle
def dense_masked_attention(Q: Tensor, K: Tensor, V: Tensor, mask: AttentionMask | np.ndarray, scale: bool = True) -> Tensor:
    """Reference dense attention; disallowed logits are set to -inf.

    Semantically identical to ``packed_attention`` on the packed form of the
    same mask, at n*n*d cost per pass.
    """
    allow = mask.allow if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=bool)
    B, n, d = Q.data.shape
    if allow.shape != (n, n):
        raise ValueError(f"mask shape {allow.shape} does not match n={n}")
    sc = Q.dtype.type(1.0 / np.sqrt(d)) if scale else Q.dtype.type(1.0)
    op_counter.add("dense_logits", B * n * n * d)
    op_counter.add("dense_values", B * n * n * d)
    U = np.einsum("bid,bjd->bij", Q.data, K.data, optimize=True) * sc
    U[:, ~allow] = -np.inf
    U = U - U.max(axis=-1, keepdims=True)
    W = np.exp(U)
    W = W / W.sum(axis=-1, keepdims=True)
    W = W.astype(Q.dtype)
    O = np.einsum("bij,bjd->bid", W, V.data, optimize=True)

    def vjp(g):
        dW = np.einsum("bid,bjd->bij", g, V.data, optimize=True)
        s = (W * dW).sum(axis=-1, keepdims=True)
        dU = W * (dW - s) * sc
        dQ = np.einsum("bij,bjd->bid", dU, K.data, optimize=True)
        dK = np.einsum("bij,bid->bjd", dU, Q.data, optimize=True)
        dV = np.einsum("bij,bid->bjd", W, g, optimize=True)
        from .tensor import _accumulate

        _accumulate(Q, dQ)
        _accumulate(K, dK)
        _accumulate(V, dV)

    return make_op(O, (Q, K, V), vjp)
