"""Dense layers, normalization, sinusoidal encodings and the residual block."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, gelu, matmul, mean, pow_const, reshape, square


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def layernorm(x: Tensor, g: Tensor, b: Tensor, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(square(xc), axis=-1, keepdims=True)
    inv = pow_const(var + eps, -0.5)
    return xc * inv * g + b


def residual_block(e: Tensor, t_embed: Tensor, p: dict[str, Tensor], normalize: bool = True) -> Tensor:
    """Per-node residual MLP conditioned on the diffusion time embedding.

    Computes ``e + MLP(norm(e) + proj(t_embed))``; the MLP's final layer is
    zero-initialized so a fresh block is the identity.
    """
    h = layernorm(e, p["ln_g"], p["ln_b"]) if normalize else e
    t_proj = linear(t_embed, p["wt"], p["bt"])  # (B, d)
    h = h + reshape(t_proj, (t_proj.shape[0], 1, t_proj.shape[1]))
    h = gelu(linear(h, p["w1"], p["b1"]))
    h = linear(h, p["w2"], p["b2"])
    return e + h


def sinusoidal_encoding(positions: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """Standard sin/cos encoding of integer positions, shape (len, dim).

    First half of the channels are sines, second half cosines; an odd last
    channel stays zero.
    """
    positions = np.asarray(positions, dtype=np.float64)
    half = max(dim // 2, 1)
    freqs = base ** (-np.arange(half, dtype=np.float64) / half)
    angles = positions[:, None] * freqs[None, :]
    out = np.zeros((len(positions), dim), dtype=np.float64)
    out[:, :half] = np.sin(angles)
    out[:, half : 2 * half] = np.cos(angles)
    return out


def timestep_embedding(t: np.ndarray, dim: int, dtype) -> np.ndarray:
    """Sinusoidal embedding of diffusion timesteps, shape (B, dim)."""
    return sinusoidal_encoding(np.asarray(t), dim).astype(dtype)
