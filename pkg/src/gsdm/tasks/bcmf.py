"""Binary-continuous matrix factorization: recover A and R from E = A R.

A[m,k] is elementwise Uniform(0,1), R[k,n] elementwise Bernoulli(0.3), with
per-term intermediates C[i,j,k] = A[i,k] R[k,j] and E[i,j] = sum_k C[i,j,k].
All three plate indices are exchangeable, which is what lets an EE-configured
network trained at small dimensions run at larger ones.

Variants: ``default`` conditions on E; ``no_intermediates`` drops C and wires
A, R directly to E; ``unconditional`` observes nothing; ``matrix_inversion``
draws A and R from N(0,1) and conditions on both A and E (setting E to the
identity at test time then solves for R ~= A^{-1}).
"""

from __future__ import annotations

import numpy as np

from ..diffusion import ArrayNorm, Codec, ObserveArrays, observe_nothing
from ..graph import CONTINUOUS, GraphicalModel, discrete
from .base import BuiltTask, TaskInstance

VARIANTS = ("default", "no_intermediates", "unconditional", "matrix_inversion")

BERNOULLI_P = 0.3
# moments of one product term A_ik * R_kj under the default priors
_C_MU = 0.5 * BERNOULLI_P
_C_VAR = (1.0 / 3.0) * BERNOULLI_P - _C_MU**2


class BcmfTask:
    name = "bcmf"
    dims_rank = 3
    default_dims = (6, 5, 2)
    variants = VARIANTS

    def build(self, dims: tuple[int, ...], variant: str = "default", task_seed: int = 0) -> BuiltTask:
        m_, n_, k_ = dims
        if min(m_, n_, k_) < 1:
            raise ValueError("bcmf dims must be >= 1")
        if variant not in VARIANTS:
            raise ValueError(f"unknown bcmf variant {variant!r}")
        continuous_r = variant == "matrix_inversion"
        g = GraphicalModel()
        g.add_array("A", [m_, k_], CONTINUOUS, exchangeable_axes={0, 1}, axis_labels=("i", "k"))
        g.add_array("R", [k_, n_], CONTINUOUS if continuous_r else discrete(2), exchangeable_axes={0, 1}, axis_labels=("k", "j"))
        if variant != "no_intermediates":
            g.add_array("C", [m_, n_, k_], CONTINUOUS, exchangeable_axes={0, 1, 2}, axis_labels=("i", "j", "k"))
        g.add_array("E", [m_, n_], CONTINUOUS, exchangeable_axes={0, 1}, axis_labels=("i", "j"))
        if variant != "no_intermediates":
            for i in range(m_):
                for j in range(n_):
                    for k in range(k_):
                        c = g.node_id("C", i, j, k)
                        g.add_edge(g.node_id("A", i, k), c)
                        g.add_edge(g.node_id("R", k, j), c)
                        g.add_edge(c, g.node_id("E", i, j))
        else:
            for i in range(m_):
                for j in range(n_):
                    e = g.node_id("E", i, j)
                    for k in range(k_):
                        g.add_edge(g.node_id("A", i, k), e)
                        g.add_edge(g.node_id("R", k, j), e)
        if continuous_r:
            norms = {
                "A": ArrayNorm(0.0, 1.0),
                "R": ArrayNorm(0.0, 1.0),
                "C": ArrayNorm(0.0, 1.0),
                "E": ArrayNorm(0.0, float(np.sqrt(k_))),
            }
        else:
            norms = {
                "A": ArrayNorm(0.5, 0.5),
                "C": ArrayNorm(_C_MU, float(np.sqrt(_C_VAR))),
                "E": ArrayNorm(_C_MU * k_, float(np.sqrt(_C_VAR * k_))),
            }
        codec = Codec(g, norms)
        return BuiltTask(self.name, variant, dims, g, codec)

    def sample(self, built: BuiltTask, rng: np.random.Generator) -> TaskInstance:
        m_, n_, k_ = built.dims
        if built.variant == "matrix_inversion":
            A = rng.standard_normal((m_, k_))
            R = rng.standard_normal((k_, n_))
        else:
            A = rng.uniform(0.0, 1.0, size=(m_, k_))
            R = (rng.uniform(size=(k_, n_)) < BERNOULLI_P).astype(np.int64)
        C = np.einsum("ik,kj->ijk", A, R.astype(np.float64))
        E = C.sum(axis=2)
        values = {"A": A, "R": R, "E": E}
        if built.variant != "no_intermediates":
            values["C"] = C
        return TaskInstance(values=values, obs_mask=self.default_policy(built)(built.model, rng), dims=built.dims)

    def default_policy(self, built: BuiltTask):
        if built.variant == "unconditional":
            return observe_nothing
        if built.variant == "matrix_inversion":
            return ObserveArrays(frozenset({"A", "E"}))
        return ObserveArrays(frozenset({"E"}))

    def metrics(self, built: BuiltTask, instance: TaskInstance, state: np.ndarray, decoded: dict[str, np.ndarray]) -> dict[str, float]:
        from .metrics import bcmf_rmse

        return {"rmse": bcmf_rmse(decoded["A"], decoded["R"], instance.values["E"])}
