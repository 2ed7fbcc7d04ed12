"""Graphical models over arrays of variables.

A model is a flat list of scalar variable nodes, grouped into named arrays,
plus directed/undirected edges and factor cliques.  The model stores structure
only; values live in task instances.  Node ids are assigned canonically:
arrays in declaration order, row-major within each array, so the same build
sequence always yields the same ids.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

DomainKind = str  # "continuous" or "discrete"


@dataclass(frozen=True)
class Domain:
    kind: DomainKind
    cardinality: int = 0  # only meaningful for discrete

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "discrete" and self.cardinality < 2:
            raise ValueError("discrete domain needs cardinality >= 2")


CONTINUOUS = Domain("continuous")


def discrete(cardinality: int) -> Domain:
    return Domain("discrete", cardinality)


@dataclass
class ArrayGroup:
    """A named array of variables sharing a domain.

    ``exchangeable_axes`` lists axes under whose index permutations the joint
    density is invariant (plates).  ``axis_labels`` optionally names the plate
    each axis belongs to, so tasks can permute the same plate jointly across
    arrays (e.g. axis i appears in both A and E).
    """

    name: str
    shape: tuple[int, ...]
    domain: Domain
    exchangeable_axes: frozenset[int] = frozenset()
    axis_labels: tuple[str | None, ...] = ()
    first_id: int = 0  # id of the array's first node under canonical ordering

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    def node_id(self, index: tuple[int, ...]) -> int:
        """Canonical (row-major) node id of a multi-index within this array."""
        if len(index) != len(self.shape):
            raise ValueError(f"index {index} has wrong rank for shape {self.shape}")
        flat = 0
        for i, s in zip(index, self.shape):
            if not 0 <= i < s:
                raise ValueError(f"index {index} out of bounds for shape {self.shape}")
            flat = flat * s + i
        return self.first_id + flat


@dataclass(frozen=True)
class VariableNode:
    id: int
    array: str
    index: tuple[int, ...]


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    kind: str  # "directed" (a -> b) or "undirected"


@dataclass(frozen=True)
class Factor:
    members: frozenset[int]


@dataclass
class GraphicalModel:
    """Structure container: arrays, nodes, edges and factor cliques.

    Mutable while being built by ``add_array``/``add_edge``/``add_factor``;
    treat as immutable once handed to the mask compiler or a denoiser.
    """

    arrays: list[ArrayGroup] = field(default_factory=list)
    nodes: list[VariableNode] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)
    factors: list[Factor] = field(default_factory=list)

    # ------------------------------------------------------------------ build
    def add_array(
        self,
        name: str,
        shape: tuple[int, ...] | list[int],
        domain: Domain,
        exchangeable_axes: set[int] | frozenset[int] = frozenset(),
        axis_labels: tuple[str | None, ...] | None = None,
    ) -> ArrayGroup:
        """Declare an array; appends one node per multi-index in row-major order."""
        shape = tuple(int(s) for s in shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"array {name!r}: shape {shape} must be non-empty with extents >= 1")
        if any(a.name == name for a in self.arrays):
            raise ValueError(f"duplicate array name {name!r}")
        exch = frozenset(int(a) for a in exchangeable_axes)
        if not exch <= set(range(len(shape))):
            raise ValueError(f"array {name!r}: exchangeable axes {sorted(exch)} out of range")
        labels = tuple(axis_labels) if axis_labels is not None else (None,) * len(shape)
        if len(labels) != len(shape):
            raise ValueError(f"array {name!r}: axis_labels must match rank")
        group = ArrayGroup(name, shape, domain, exch, labels, first_id=len(self.nodes))
        self.arrays.append(group)
        for index in itertools.product(*(range(s) for s in shape)):
            self.nodes.append(VariableNode(len(self.nodes), name, index))
        return group

    def add_edge(self, a: int, b: int, kind: str = "directed") -> None:
        if kind not in ("directed", "undirected"):
            raise ValueError(f"unknown edge kind {kind!r}")
        self._check_id(a)
        self._check_id(b)
        if a == b:
            raise ValueError(f"self-edge on node {a} (self-edges are added by the mask compiler)")
        self.edges.append(Edge(a, b, kind))

    def add_factor(self, members) -> None:
        ids = frozenset(int(m) for m in members)
        if len(ids) < 2:
            raise ValueError("factor needs at least 2 distinct members")
        for m in ids:
            self._check_id(m)
        self.factors.append(Factor(ids))

    def _check_id(self, i: int) -> None:
        if not 0 <= i < len(self.nodes):
            raise ValueError(f"node id {i} out of range (n={len(self.nodes)})")

    # ----------------------------------------------------------------- access
    @property
    def n(self) -> int:
        return len(self.nodes)

    def array(self, name: str) -> ArrayGroup:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KeyError(name)

    def node_id(self, array: str, *index: int) -> int:
        return self.array(array).node_id(tuple(index))

    def plate_permutation(self, label: str, perm) -> list[int]:
        """Node permutation induced by permuting one plate's index jointly.

        ``perm`` maps old index -> new index along every axis labelled
        ``label``; all other nodes stay in place.  Returns pi as a list where
        pi[old_id] = new_id.
        """
        perm = list(perm)
        pi = list(range(self.n))
        for group in self.arrays:
            axes = [ax for ax, lb in enumerate(group.axis_labels) if lb == label]
            if not axes:
                continue
            for ax in axes:
                if len(perm) != group.shape[ax]:
                    raise ValueError(f"permutation length {len(perm)} != extent of plate {label!r} in {group.name!r}")
            for index in itertools.product(*(range(s) for s in group.shape)):
                new_index = tuple(perm[i] if ax in axes else i for ax, i in enumerate(index))
                pi[group.node_id(index)] = group.node_id(new_index)
        return pi

    # --------------------------------------------------------------- validate
    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty means ok)."""
        violations: list[str] = []
        seen_names = set()
        expect_id = 0
        for group in self.arrays:
            if group.name in seen_names:
                violations.append(f"duplicate array name {group.name!r}")
            seen_names.add(group.name)
            if not group.shape or any(s < 1 for s in group.shape):
                violations.append(f"array {group.name!r} has invalid shape {group.shape}")
            if not set(group.exchangeable_axes) <= set(range(len(group.shape))):
                violations.append(f"array {group.name!r} has out-of-range exchangeable axes")
            if group.first_id != expect_id:
                violations.append(f"array {group.name!r} breaks canonical id ordering")
            expect_id += group.size
        if expect_id != len(self.nodes):
            violations.append(f"node count {len(self.nodes)} != sum of array sizes {expect_id}")
        for k, node in enumerate(self.nodes):
            if node.id != k:
                violations.append(f"node {k} has id {node.id}")
        for e in self.edges:
            if not (0 <= e.a < self.n and 0 <= e.b < self.n):
                violations.append(f"dangling edge {e.a}-{e.b}")
            elif e.a == e.b:
                violations.append(f"self-edge on node {e.a}")
        for f in self.factors:
            if len(f.members) < 2:
                violations.append(f"factor of size {len(f.members)}")
            elif any(not 0 <= m < self.n for m in f.members):
                violations.append(f"dangling factor {sorted(f.members)}")
        return violations

    def check_valid(self) -> None:
        violations = self.validate()
        if violations:
            raise ValueError("invalid model: " + "; ".join(violations))
