"""Boolean circuit task: a fixed random AND/OR binary tree over 2^n inputs.

The circuit is sampled once per experiment from ``task_seed``; data points
draw uniform input bits and record every gate output as intermediate nodes
plus a terminal output node.  The ``no_intermediates`` variant keeps only the
input bits and the output node, wired directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion import Codec, ObserveArrays
from ..graph import GraphicalModel, discrete
from .base import BuiltTask, TaskInstance

VARIANTS = ("default", "no_intermediates")


@dataclass
class CircuitSpec:
    depth: int
    gates: list[list[str]]  # gates[l][j] for layer l+1, each "and" or "or"

    @property
    def input_width(self) -> int:
        return 2**self.depth

    @property
    def gate_count(self) -> int:
        return 2**self.depth - 1


def make_circuit(depth: int, rng: np.random.Generator) -> CircuitSpec:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    gates = [["and" if rng.integers(2) else "or" for _ in range(2 ** (depth - 1 - l))] for l in range(depth)]
    return CircuitSpec(depth, gates)


def eval_circuit(spec: CircuitSpec, bits: np.ndarray) -> list[np.ndarray]:
    """Layer outputs for one input assignment (list of arrays, sizes halving)."""
    cur = np.asarray(bits, dtype=np.int64)
    outs = []
    for layer in spec.gates:
        nxt = np.empty(len(layer), dtype=np.int64)
        for j, gate in enumerate(layer):
            a, b = cur[2 * j], cur[2 * j + 1]
            nxt[j] = (a & b) if gate == "and" else (a | b)
        outs.append(nxt)
        cur = nxt
    return outs


class BooleanTask:
    name = "boolean"
    dims_rank = 1
    default_dims = (2,)
    variants = VARIANTS

    def build(self, dims: tuple[int, ...], variant: str = "default", task_seed: int = 0) -> BuiltTask:
        (depth,) = dims
        if variant not in VARIANTS:
            raise ValueError(f"unknown boolean variant {variant!r}")
        spec = make_circuit(depth, np.random.default_rng(task_seed))
        m = GraphicalModel()
        m.add_array("input", [spec.input_width], discrete(2))
        if variant == "default":
            for l in range(depth):
                m.add_array(f"gate{l + 1}", [2 ** (depth - 1 - l)], discrete(2))
            m.add_array("out", [1], discrete(2))
            prev = "input"
            for l in range(depth):
                layer = f"gate{l + 1}"
                for j in range(2 ** (depth - 1 - l)):
                    m.add_edge(m.node_id(prev, 2 * j), m.node_id(layer, j))
                    m.add_edge(m.node_id(prev, 2 * j + 1), m.node_id(layer, j))
                prev = layer
            m.add_edge(m.node_id(f"gate{depth}", 0), m.node_id("out", 0))
        else:
            m.add_array("out", [1], discrete(2))
            for i in range(spec.input_width):
                m.add_edge(m.node_id("input", i), m.node_id("out", 0))
        codec = Codec(m)
        return BuiltTask(self.name, variant, dims, m, codec, meta={"circuit": spec})

    def sample(self, built: BuiltTask, rng: np.random.Generator) -> TaskInstance:
        spec: CircuitSpec = built.meta["circuit"]
        bits = rng.integers(0, 2, size=spec.input_width)
        layers = eval_circuit(spec, bits)
        values = {"input": bits, "out": np.array([layers[-1][0]])}
        if built.variant == "default":
            for l, out in enumerate(layers):
                values[f"gate{l + 1}"] = out
        return TaskInstance(values=values, obs_mask=self.default_policy(built)(built.model, rng), dims=built.dims)

    def default_policy(self, built: BuiltTask):
        return ObserveArrays(frozenset({"input"}))

    def metrics(self, built: BuiltTask, instance: TaskInstance, state: np.ndarray, decoded: dict[str, np.ndarray]) -> dict[str, float]:
        return {"accuracy": float(decoded["out"][0] == instance.values["out"][0])}
