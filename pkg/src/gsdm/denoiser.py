"""The denoising network: per-node embeddings, masked attention layers, heads.

Every graphical-model node becomes one token.  A token's initial embedding is
the sum of an input projection of its (noised or observed) channel values, a
positional embedding identifying the node, and a globally shared observation
embedding when the node is conditioned on.  L transformer layers alternate a
time-conditioned residual MLP with masked multi-head attention; per-array
affine heads map final embeddings back to channel space.

Positional schemes:
  IE - one learned vector per node (fixed dimensionality only),
  AE - learned per-array vector plus fixed sinusoidal encodings of the
       node's index along each axis (separate frequency band per axis),
  EE - as AE but the sinusoidal term is dropped on exchangeable axes, which
       makes the network equivariant to plate permutations and lets one
       parameter set serve any problem dimensions.

All parameters are keyed by array name and layer index, never by node count,
except IE's per-node table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import Codec
from .graph import GraphicalModel
from .masks import AttentionMask, check_depth, pack
from .nn.attention import dense_masked_attention, packed_attention
from .nn.layers import layernorm, linear, residual_block, sinusoidal_encoding, timestep_embedding
from .nn.optim import ParameterStore
from .nn.tensor import Tensor, concat, default_dtype, mul, no_grad, reshape, transpose

SCHEMES = ("IE", "AE", "EE")


@dataclass
class DenoiserConfig:
    layers: int = 6
    dim: int = 64
    heads: int = 8
    scheme: str = "EE"
    normalize: bool = True
    logit_scale: bool = True
    hidden_mult: int = 2

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")


def _axis_indices(shape: tuple[int, ...]) -> np.ndarray:
    """(size, rank) array of each node's multi-index, row-major order."""
    grids = np.indices(shape)
    return grids.reshape(len(shape), -1).T


def array_position_encoding(shape: tuple[int, ...], exchangeable: frozenset[int], dim: int, drop_exchangeable: bool) -> np.ndarray:
    """Fixed sinusoidal part of the positional embedding for one array.

    Each axis writes into its own contiguous frequency band so indices along
    different axes cannot collide; with ``drop_exchangeable`` the bands of
    exchangeable axes stay zero (the EE rule).
    """
    rank = len(shape)
    size = int(np.prod(shape))
    out = np.zeros((size, dim), dtype=np.float64)
    band = dim // rank
    if band == 0:
        raise ValueError(f"embedding dim {dim} too small for rank {rank}")
    idx = _axis_indices(shape)
    for ax in range(rank):
        if drop_exchangeable and ax in exchangeable:
            continue
        cols = slice(ax * band, (ax + 1) * band)
        out[:, cols] = sinusoidal_encoding(idx[:, ax], band)
    return out


@dataclass
class EmbeddingTables:
    """Per-array positional constants and the parameter names backing them."""

    sin_const: dict[str, np.ndarray]
    param_names: dict[str, str]
    scheme: str


def build_embeddings(model: GraphicalModel, config: DenoiserConfig, store: ParameterStore) -> EmbeddingTables:
    """Create (or reuse) positional-embedding parameters for a model."""
    sin_const: dict[str, np.ndarray] = {}
    param_names: dict[str, str] = {}
    for group in model.arrays:
        if config.scheme == "IE":
            name = f"pos.ie.{group.name}"
            store.get_or_create(name, (group.size, config.dim), init="normal_small")
            sin_const[group.name] = np.zeros((group.size, config.dim))
        else:
            name = f"pos.arr.{group.name}"
            store.get_or_create(name, (config.dim,), init="normal_small")
            sin_const[group.name] = array_position_encoding(
                group.shape, group.exchangeable_axes, config.dim, drop_exchangeable=(config.scheme == "EE")
            )
        param_names[group.name] = name
    return EmbeddingTables(sin_const, param_names, config.scheme)


class Denoiser:
    """x0 estimator over one graphical model's nodes.

    Parameters live in an external ``ParameterStore`` so several Denoisers
    (e.g. for different problem dimensions) can share them; building one for
    an incompatible store (IE at a different node count) raises.
    """

    def __init__(
        self,
        model: GraphicalModel,
        codec: Codec,
        config: DenoiserConfig,
        store: ParameterStore,
        mask: AttentionMask,
        attention_impl: str = "packed",
    ):
        if attention_impl not in ("packed", "dense"):
            raise ValueError("attention_impl must be 'packed' or 'dense'")
        model.check_valid()
        if mask.n != model.n:
            raise ValueError(f"mask n={mask.n} does not match model n={model.n}")
        self.model = model
        self.codec = codec
        self.config = config
        self.store = store
        self.mask = mask
        self.attention_impl = attention_impl
        self.packed = pack(mask) if attention_impl == "packed" else None
        check_depth(mask, config.layers)
        self.embeddings = build_embeddings(model, config, store)
        self._create_params()

    # ------------------------------------------------------------ parameters
    def _create_params(self) -> None:
        cfg = self.config
        d = cfg.dim
        st = self.store
        for group in self.model.arrays:
            w = self.codec.widths[group.name]
            st.get_or_create(f"enc.{group.name}.w", (w, d))
            st.get_or_create(f"enc.{group.name}.b", (d,), init="zeros")
            st.get_or_create(f"head.{group.name}.w", (d, w), init="zeros")
            st.get_or_create(f"head.{group.name}.b", (w,), init="zeros")
        st.get_or_create("obs.e", (d,), init="normal_small")
        h = d * cfg.hidden_mult
        for i in range(cfg.layers):
            if cfg.normalize:
                st.get_or_create(f"blk{i}.ln_g", (d,), init="ones")
                st.get_or_create(f"blk{i}.ln_b", (d,), init="zeros")
                st.get_or_create(f"attn{i}.ln_g", (d,), init="ones")
                st.get_or_create(f"attn{i}.ln_b", (d,), init="zeros")
            st.get_or_create(f"blk{i}.wt", (d, d))
            st.get_or_create(f"blk{i}.bt", (d,), init="zeros")
            st.get_or_create(f"blk{i}.w1", (d, h))
            st.get_or_create(f"blk{i}.b1", (h,), init="zeros")
            st.get_or_create(f"blk{i}.w2", (h, d), init="zeros")
            st.get_or_create(f"blk{i}.b2", (d,), init="zeros")
            for nm in ("q", "k", "v"):
                st.get_or_create(f"attn{i}.w{nm}", (d, d))
                st.get_or_create(f"attn{i}.b{nm}", (d,), init="zeros")
            st.get_or_create(f"attn{i}.wo", (d, d), init="zeros")
            st.get_or_create(f"attn{i}.bo", (d,), init="zeros")
        if cfg.normalize:
            st.get_or_create("final.ln_g", (d,), init="ones")
            st.get_or_create("final.ln_b", (d,), init="zeros")

    def positional_matrix(self) -> np.ndarray:
        """Current positional embedding per node, shape (n, dim); test helper."""
        rows = []
        for group in self.model.arrays:
            pname = self.embeddings.param_names[group.name]
            learned = self.store[pname].data
            sin = self.embeddings.sin_const[group.name]
            rows.append(learned + sin if learned.ndim == 2 else sin + learned[None, :])
        return np.concatenate(rows, axis=0)

    # --------------------------------------------------------------- forward
    def forward(self, x: np.ndarray, obs_nodes: np.ndarray, t: np.ndarray) -> Tensor:
        """Predict encoded x0 for every channel; (B, S) in, (B, S) out."""
        cfg = self.config
        st = self.store
        dtype = default_dtype()
        x = np.asarray(x)
        B = x.shape[0]
        n = self.model.n
        if x.shape != (B, self.codec.state_size):
            raise ValueError(f"state shape {x.shape} != (B, {self.codec.state_size})")
        obs_nodes = np.broadcast_to(np.asarray(obs_nodes, dtype=bool), (B, n))

        blocks = []
        for group in self.model.arrays:
            w = self.codec.widths[group.name]
            xa = Tensor(np.ascontiguousarray(x[:, self.codec.channel_slices[group.name]], dtype=dtype).reshape(B, group.size, w))
            hb = linear(xa, st[f"enc.{group.name}.w"], st[f"enc.{group.name}.b"])
            pos = self.embeddings.sin_const[group.name]
            learned = st[self.embeddings.param_names[group.name]]
            hb = hb + Tensor(pos.astype(dtype)) + learned
            blocks.append(hb)
        e = concat(blocks, axis=1)
        obs_f = Tensor(obs_nodes.astype(dtype)[:, :, None])
        e = e + mul(obs_f, st["obs.e"])

        temb = Tensor(timestep_embedding(t, cfg.dim, dtype))
        H = cfg.heads
        dh = cfg.dim // H
        for i in range(cfg.layers):
            blk = {k: st[f"blk{i}.{k}"] for k in ("wt", "bt", "w1", "b1", "w2", "b2")}
            if cfg.normalize:
                blk["ln_g"] = st[f"blk{i}.ln_g"]
                blk["ln_b"] = st[f"blk{i}.ln_b"]
            e = residual_block(e, temb, blk, normalize=cfg.normalize)
            h = layernorm(e, st[f"attn{i}.ln_g"], st[f"attn{i}.ln_b"]) if cfg.normalize else e
            q = linear(h, st[f"attn{i}.wq"], st[f"attn{i}.bq"])
            k = linear(h, st[f"attn{i}.wk"], st[f"attn{i}.bk"])
            v = linear(h, st[f"attn{i}.wv"], st[f"attn{i}.bv"])
            if H > 1:
                q, k, v = (reshape(transpose(reshape(z, (B, n, H, dh)), (0, 2, 1, 3)), (B * H, n, dh)) for z in (q, k, v))
            if self.attention_impl == "packed":
                o = packed_attention(q, k, v, self.packed, scale=cfg.logit_scale)
            else:
                o = dense_masked_attention(q, k, v, self.mask, scale=cfg.logit_scale)
            if H > 1:
                o = reshape(transpose(reshape(o, (B, H, n, dh)), (0, 2, 1, 3)), (B, n, cfg.dim))
            o = linear(o, st[f"attn{i}.wo"], st[f"attn{i}.bo"])
            e = e + o
        if cfg.normalize:
            e = layernorm(e, st["final.ln_g"], st["final.ln_b"])

        outs = []
        for group in self.model.arrays:
            w = self.codec.widths[group.name]
            ha = e[:, group.first_id : group.first_id + group.size, :]
            ya = linear(ha, st[f"head.{group.name}.w"], st[f"head.{group.name}.b"])
            outs.append(reshape(ya, (B, group.size * w)))
        return concat(outs, axis=1)

    def predict(self, x: np.ndarray, obs_nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Tape-free forward pass for sampling and evaluation."""
        with no_grad():
            return self.forward(x, obs_nodes, t).data
