"""Sorting task: recover the permutation that sorts a list of gaussians.

Arrays: unsorted values u (observed by default), permutation matrix P with
row/column one-hot factors, per-entry products C[i,j] = P[i,j] * u[j], and
the sorted output s[i] = sum_j C[i,j] constrained by factors between
neighbouring elements.  The original-position axis j is exchangeable.

Variants vary the constraint structure on s (``default`` adjacent pairs,
``full_s`` one big factor, ``unconstrained_s`` none) or drop C entirely
(``no_intermediates``, where P and u connect straight to s).
"""

from __future__ import annotations

import numpy as np

from ..diffusion import ArrayNorm, Codec, ObserveArrays
from ..graph import CONTINUOUS, GraphicalModel, discrete
from .base import BuiltTask, TaskInstance

VARIANTS = ("default", "full_s", "unconstrained_s", "no_intermediates")


class SortingTask:
    name = "sorting"
    dims_rank = 1
    default_dims = (8,)
    variants = VARIANTS

    def build(self, dims: tuple[int, ...], variant: str = "default", task_seed: int = 0) -> BuiltTask:
        (n,) = dims
        if n < 2:
            raise ValueError("sorting needs n >= 2")
        if variant not in VARIANTS:
            raise ValueError(f"unknown sorting variant {variant!r}")
        m = GraphicalModel()
        m.add_array("u", [n], CONTINUOUS, exchangeable_axes={0}, axis_labels=("j",))
        m.add_array("P", [n, n], discrete(2), exchangeable_axes={1}, axis_labels=("i", "j"))
        if variant != "no_intermediates":
            m.add_array("C", [n, n], CONTINUOUS, exchangeable_axes={1}, axis_labels=("i", "j"))
        m.add_array("s", [n], CONTINUOUS, axis_labels=("i",))
        if variant != "no_intermediates":
            for i in range(n):
                for j in range(n):
                    cij = m.node_id("C", i, j)
                    m.add_edge(m.node_id("u", j), cij)
                    m.add_edge(m.node_id("P", i, j), cij)
                    m.add_edge(cij, m.node_id("s", i))
        else:
            for i in range(n):
                for j in range(n):
                    m.add_edge(m.node_id("P", i, j), m.node_id("s", i))
                    m.add_edge(m.node_id("u", j), m.node_id("s", i))
        for i in range(n):  # one-hot row and column constraints on P
            m.add_factor({m.node_id("P", i, j) for j in range(n)})
            m.add_factor({m.node_id("P", j, i) for j in range(n)})
        if variant in ("default", "no_intermediates"):
            for i in range(n - 1):
                m.add_factor({m.node_id("s", i), m.node_id("s", i + 1)})
        elif variant == "full_s":
            m.add_factor({m.node_id("s", i) for i in range(n)})
        codec = Codec(m, {"u": ArrayNorm(0.0, 1.0), "s": ArrayNorm(0.0, 1.0), "C": ArrayNorm(0.0, 1.0)})
        return BuiltTask(self.name, variant, dims, m, codec)

    def sample(self, built: BuiltTask, rng: np.random.Generator) -> TaskInstance:
        (n,) = built.dims
        u = rng.standard_normal(n)
        order = np.argsort(u, kind="stable")
        P = np.zeros((n, n), dtype=np.int64)
        P[np.arange(n), order] = 1
        s = u[order]
        values = {"u": u, "P": P, "s": s}
        if built.variant != "no_intermediates":
            values["C"] = P * u[None, :]
        return TaskInstance(values=values, obs_mask=self.default_policy(built)(built.model, rng), dims=built.dims)

    def default_policy(self, built: BuiltTask):
        return ObserveArrays(frozenset({"u"}))

    def metrics(self, built: BuiltTask, instance: TaskInstance, state: np.ndarray, decoded: dict[str, np.ndarray]) -> dict[str, float]:
        from .metrics import perm_mismatch

        (n,) = built.dims
        sl = built.codec.channel_slices["P"]
        # score of class 1 per P entry: argmax over columns is robust even when
        # the raw one-hot decode violates permutation structure
        scores = np.asarray(state[sl]).reshape(n, n, 2)[:, :, 1]
        return {"perm_mismatch": perm_mismatch(instance.values["P"], scores)}
