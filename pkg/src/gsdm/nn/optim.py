"""Parameter storage, Adam with global-norm clipping, and gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, default_dtype


class ParameterStore:
    """Named parameter tensors with stable iteration order.

    ``get_or_create`` makes parameter sharing across rebuilt models trivial:
    a denoiser built for different problem dimensions reuses any parameter
    whose name it regenerates (the basis of dimension generalization).
    """

    def __init__(self, seed: int = 0):
        self._params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)

    def get_or_create(self, name: str, shape: tuple[int, ...], init: str = "fan_in") -> Tensor:
        if name in self._params:
            p = self._params[name]
            if p.data.shape != tuple(shape):
                raise ValueError(f"parameter {name!r} exists with shape {p.data.shape}, requested {shape}")
            return p
        dtype = default_dtype()
        if init == "zeros":
            data = np.zeros(shape, dtype=dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=dtype)
        elif init == "normal":
            data = self.rng.standard_normal(shape).astype(dtype)
        elif init == "normal_small":
            data = (0.02 * self.rng.standard_normal(shape)).astype(dtype)
        elif init == "fan_in":
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            bound = 1.0 / np.sqrt(fan_in)
            data = self.rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        p = Tensor(data, requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            if k in self._params:
                if self._params[k].data.shape != arr.shape:
                    raise ValueError(f"parameter {k!r}: checkpoint shape {arr.shape} != current {self._params[k].data.shape}")
                self._params[k].data = arr.copy()
            else:
                self._params[k] = Tensor(arr.copy(), requires_grad=True)

    def cast(self, dtype) -> None:
        for p in self._params.values():
            p.data = p.data.astype(dtype)


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, p in store.items():
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm


class Adam:
    """Adam with bias correction and global-norm gradient clipping at 1.0."""

    def __init__(
        self,
        store: ParameterStore,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 1.0,
    ):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> float:
        """Apply one update from accumulated gradients; returns the pre-clip norm."""
        norm = clip_global_norm(self.store, self.clip_norm) if self.clip_norm else 0.0
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
        return norm

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        self.m = {k: a.copy() for k, a in state["m"].items()}
        self.v = {k: a.copy() for k, a in state["v"].items()}


def grad_check(fn: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central finite differences.

    Run in float64 (see ``precision``); ``fn`` must rebuild the forward pass
    on every call since perturbation happens in place.
    """
    for p in params.values():
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    worst = 0.0
    for k, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic[k].reshape(-1)[i]
            denom = max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
