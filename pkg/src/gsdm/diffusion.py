"""Forward noising, training loss, ancestral sampling, and the value codec.

The codec maps task values onto a flat continuous state vector: continuous
nodes get one affinely-normalized channel, discrete nodes get a zero-mean
scaled one-hot block (decoded by argmax).  Observed nodes keep their clean
encoded values through training and sampling; noise and loss touch latent
channels only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import GraphicalModel
from .nn.tensor import Tensor, mul, square, sum_

# ------------------------------------------------------------------ schedule


@dataclass
class DiffusionSchedule:
    timesteps: int
    betas: np.ndarray  # (T,), index t-1 holds beta_t
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t) -> np.ndarray:
        """alpha-bar_t with alpha-bar_0 = 1; accepts scalars or arrays."""
        t = np.asarray(t)
        table = np.concatenate([[1.0], self.alpha_bars])
        return table[t]


def make_schedule(timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.005) -> DiffusionSchedule:
    """Linear beta schedule; defaults give beta_1=1e-4, beta_1000=0.005."""
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range [{beta_start}, {beta_end}]")
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return DiffusionSchedule(timesteps, betas, alphas, alpha_bars)


# --------------------------------------------------------------------- codec


@dataclass
class ArrayNorm:
    """Affine normalization (x - mu) / sigma for a continuous array."""

    mu: float = 0.0
    sigma: float = 1.0


@dataclass
class Codec:
    """Layout and encode/decode between task values and the diffusion state."""

    model: GraphicalModel
    norms: dict[str, ArrayNorm] = field(default_factory=dict)

    def __post_init__(self):
        self.widths: dict[str, int] = {}
        self.channel_slices: dict[str, slice] = {}
        off = 0
        for group in self.model.arrays:
            w = group.domain.cardinality if group.domain.kind == "discrete" else 1
            self.widths[group.name] = w
            self.channel_slices[group.name] = slice(off, off + group.size * w)
            off += group.size * w
        self.state_size = off

    def norm(self, name: str) -> ArrayNorm:
        return self.norms.get(name, ArrayNorm())

    def encode(self, values: dict[str, np.ndarray]) -> np.ndarray:
        """Flat (state_size,) float64 encoding of one instance's values."""
        out = np.zeros(self.state_size, dtype=np.float64)
        for group in self.model.arrays:
            v = np.asarray(values[group.name])
            if v.shape != group.shape:
                raise ValueError(f"array {group.name!r}: values shape {v.shape} != {group.shape}")
            sl = self.channel_slices[group.name]
            if group.domain.kind == "continuous":
                nm = self.norm(group.name)
                out[sl] = ((v.reshape(-1) - nm.mu) / nm.sigma).astype(np.float64)
            else:
                c = group.domain.cardinality
                flat = v.reshape(-1).astype(np.int64)
                if flat.min() < 0 or flat.max() >= c:
                    raise ValueError(f"array {group.name!r}: discrete value out of range 0..{c - 1}")
                onehot = np.zeros((flat.size, c), dtype=np.float64)
                onehot[np.arange(flat.size), flat] = 1.0
                out[sl] = (2.0 * (onehot - 1.0 / c)).reshape(-1)
        return out

    def decode(self, state: np.ndarray) -> dict[str, np.ndarray]:
        """Invert ``encode``: denormalize continuous, argmax discrete."""
        values: dict[str, np.ndarray] = {}
        for group in self.model.arrays:
            sl = self.channel_slices[group.name]
            block = np.asarray(state[sl])
            if group.domain.kind == "continuous":
                nm = self.norm(group.name)
                values[group.name] = (block * nm.sigma + nm.mu).reshape(group.shape)
            else:
                c = group.domain.cardinality
                values[group.name] = block.reshape(group.size, c).argmax(axis=1).reshape(group.shape)
        return values

    def node_channel_mask(self, node_mask: np.ndarray) -> np.ndarray:
        """Expand a per-node boolean mask to per-channel (observation masks)."""
        node_mask = np.asarray(node_mask, dtype=bool)
        out = np.zeros(self.state_size, dtype=bool)
        for group in self.model.arrays:
            w = self.widths[group.name]
            nodes = node_mask[group.first_id : group.first_id + group.size]
            sl = self.channel_slices[group.name]
            out[sl] = np.repeat(nodes, w)
        return out


# ----------------------------------------------------------------- partitions


@dataclass
class ObserveArrays:
    """Observe every node of the named arrays; everything else is latent."""

    names: frozenset[str]

    def __call__(self, model: GraphicalModel, rng: np.random.Generator) -> np.ndarray:
        mask = np.zeros(model.n, dtype=bool)
        for group in model.arrays:
            if group.name in self.names:
                mask[group.first_id : group.first_id + group.size] = True
        return mask


@dataclass
class ObserveRandomCount:
    """Observe n_o ~ U{lo..hi} uniformly chosen nodes (Sudoku-style)."""

    lo: int
    hi: int

    def __call__(self, model: GraphicalModel, rng: np.random.Generator) -> np.ndarray:
        n_o = int(rng.integers(self.lo, self.hi + 1))
        mask = np.zeros(model.n, dtype=bool)
        if n_o:
            mask[rng.choice(model.n, size=n_o, replace=False)] = True
        return mask


@dataclass
class ObserveFixedCount:
    count: int

    def __call__(self, model: GraphicalModel, rng: np.random.Generator) -> np.ndarray:
        mask = np.zeros(model.n, dtype=bool)
        if self.count:
            mask[rng.choice(model.n, size=self.count, replace=False)] = True
        return mask


def observe_nothing(model: GraphicalModel, rng: np.random.Generator) -> np.ndarray:
    return np.zeros(model.n, dtype=bool)


def sample_partition(model: GraphicalModel, policy, rng: np.random.Generator) -> np.ndarray:
    """Draw one observation mask (True = observed) from a partition policy."""
    mask = policy(model, rng)
    if mask.shape != (model.n,):
        raise ValueError("partition policy returned a mask of the wrong length")
    return mask


# ------------------------------------------------------------------- noising


def q_sample(x0: np.ndarray, t: np.ndarray, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form forward marginal: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    t = np.asarray(t)
    if t.min() < 1 or t.max() > schedule.timesteps:
        raise ValueError(f"t out of range 1..{schedule.timesteps}")
    ab = schedule.alpha_bars[t - 1].reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def training_loss(denoiser, x0: np.ndarray, obs_nodes: np.ndarray, t: np.ndarray, eps: np.ndarray, schedule: DiffusionSchedule) -> Tensor:
    """Mean squared error between the denoiser output and x0 on latent channels.

    ``x0``: (B, S) encoded clean states; ``obs_nodes``: (B, n) observation
    masks.  Observed channels carry clean values into the network and
    contribute nothing to the loss (their output gradient is exactly zero).
    """
    codec = denoiser.codec
    B = x0.shape[0]
    obs_ch = np.stack([codec.node_channel_mask(obs_nodes[b]) for b in range(B)])
    x_in = q_sample(x0, t, eps, schedule)
    x_in = np.where(obs_ch, x0, x_in)
    pred = denoiser.forward(x_in, obs_nodes, t)
    latent = (~obs_ch).astype(pred.dtype)
    count = float(latent.sum())
    if count == 0.0:
        raise ValueError("fully observed partition: loss is undefined (harness should skip)")
    target = Tensor(x0.astype(pred.data.dtype))
    diff = mul(pred - target, Tensor(latent))
    return sum_(square(diff)) * (1.0 / count)


# ------------------------------------------------------------------ sampling


def p_sample_step(
    x_t: np.ndarray,
    t: int,
    x0_hat: np.ndarray,
    schedule: DiffusionSchedule,
    noise: np.ndarray | None,
) -> np.ndarray:
    """One reverse transition x_t -> x_{t-1} (posterior-mean parameterization).

    mean = sqrt(ab_{t-1}) b_t / (1-ab_t) * x0_hat + sqrt(a_t)(1-ab_{t-1})/(1-ab_t) * x_t
    var  = (1-ab_{t-1}) / (1-ab_t) * b_t;   the t=1 step adds no noise.
    """
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    ab_t = schedule.alpha_bars[t - 1]
    ab_prev = 1.0 if t == 1 else schedule.alpha_bars[t - 2]
    c0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    ct = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = c0 * x0_hat + ct * x_t
    if t == 1 or noise is None:
        return mean
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
    return mean + np.sqrt(var) * noise


def sample(
    denoise_fn,
    codec: Codec,
    obs_nodes: np.ndarray,
    obs_state: np.ndarray,
    schedule: DiffusionSchedule,
    rng: np.random.Generator,
    batch: int = 1,
    clamp: float | None = None,
) -> np.ndarray:
    """Ancestral sampling t = T..1; returns (batch, S) encoded x0 states.

    ``denoise_fn(x, obs_nodes, t_array) -> x0_hat`` is typically the trained
    denoiser but may be any estimator (e.g. an oracle in tests).  Observed
    channels are pinned to ``obs_state`` at every step.
    """
    S = codec.state_size
    obs_nodes = np.asarray(obs_nodes, dtype=bool)
    obs_b = np.broadcast_to(obs_nodes, (batch, codec.model.n))
    obs_ch = codec.node_channel_mask(obs_nodes)
    x = rng.standard_normal((batch, S))
    x[:, obs_ch] = obs_state[obs_ch]
    for t in range(schedule.timesteps, 0, -1):
        t_arr = np.full(batch, t, dtype=np.int64)
        x0_hat = np.asarray(denoise_fn(x, obs_b, t_arr), dtype=np.float64)
        if clamp is not None:
            x0_hat = np.clip(x0_hat, -clamp, clamp)
        noise = rng.standard_normal((batch, S)) if t > 1 else None
        x = p_sample_step(x, t, x0_hat, schedule, noise)
        x[:, obs_ch] = obs_state[obs_ch]
    return x
