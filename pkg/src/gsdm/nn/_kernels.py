"""Numba inner loops for packed masked attention.

Import of this module is guarded in ``gsdm.nn.attention``; if numba is
missing the numpy fallback path is used instead.  Kernels are single-threaded
so results are bitwise reproducible run to run.  Padded neighbor slots sit at
the end of each row (``cnt`` real entries first), so loops simply stop early
instead of masking.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def packed_attn_fwd(Q, K, V, nbr, cnt, scale, W, O):
    """Q,K,V: (B, n, d); nbr: (n, m) int32; cnt: (n,) int32; outputs W (B,n,m), O (B,n,d)."""
    B, n, d = Q.shape
    m = nbr.shape[1]
    for b in range(B):
        for i in range(n):
            c = cnt[i]
            mx = -1e30
            for j in range(c):
                a = nbr[i, j]
                s = 0.0
                for k in range(d):
                    s += Q[b, i, k] * K[b, a, k]
                s *= scale
                W[b, i, j] = s
                if s > mx:
                    mx = s
            z = 0.0
            for j in range(c):
                w = math.exp(W[b, i, j] - mx)
                W[b, i, j] = w
                z += w
            inv = 1.0 / z
            for j in range(c):
                W[b, i, j] *= inv
            for j in range(c, m):
                W[b, i, j] = 0.0
            for k in range(d):
                acc = 0.0
                for j in range(c):
                    acc += W[b, i, j] * V[b, nbr[i, j], k]
                O[b, i, k] = acc


@njit(cache=True)
def packed_attn_bwd(g, Q, K, V, nbr, cnt, W, scale, dQ, dK, dV, dW):
    """Gradient of packed_attn_fwd; dW is an (m,) scratch buffer."""
    B, n, d = Q.shape
    for b in range(B):
        for i in range(n):
            c = cnt[i]
            s = 0.0
            for j in range(c):
                a = nbr[i, j]
                acc = 0.0
                for k in range(d):
                    acc += g[b, i, k] * V[b, a, k]
                dW[j] = acc
                s += W[b, i, j] * acc
            for j in range(c):
                a = nbr[i, j]
                du = W[b, i, j] * (dW[j] - s) * scale
                for k in range(d):
                    dQ[b, i, k] += du * K[b, a, k]
                    dK[b, a, k] += du * Q[b, i, k]
                    dV[b, a, k] += W[b, i, j] * g[b, i, k]
