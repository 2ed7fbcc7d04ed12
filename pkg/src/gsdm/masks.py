"""Attention masks derived from graphical models.

``compile_mask`` turns edges and factor cliques into a boolean n x n adjacency
(node i may attend to node j), symmetrized by default and with self-edges on
the diagonal.  ``pack`` converts a mask into the row-packed neighbor-list form
used by the sparse attention kernels, padded to the densest row's width m.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .graph import GraphicalModel


@dataclass
class AttentionMask:
    allow: np.ndarray  # bool, shape (n, n)

    @property
    def n(self) -> int:
        return self.allow.shape[0]

    def row_densities(self) -> np.ndarray:
        return self.allow.sum(axis=1)


@dataclass
class PackedMask:
    """Row-packed neighbor lists, padded to the widest row.

    ``neighbors[i, j]`` is the id of the j-th node row i attends to (ascending
    id order); slots with ``pad_flags`` set are padding (index 0, weight
    masked out by the kernels).  ``counts[i]`` is the number of real entries.
    """

    n: int
    m: int
    neighbors: np.ndarray  # int32, shape (n, m)
    pad_flags: np.ndarray  # bool, shape (n, m)
    counts: np.ndarray  # int32, shape (n,)

    def unpack(self) -> AttentionMask:
        allow = np.zeros((self.n, self.n), dtype=bool)
        for i in range(self.n):
            allow[i, self.neighbors[i, : self.counts[i]]] = True
        return AttentionMask(allow)


def compile_mask(
    model: GraphicalModel,
    symmetrize: bool = True,
    self_edges: bool = True,
) -> AttentionMask:
    """Derive the attention mask from a model's edges and factors.

    Node i may attend to node j iff i == j (when ``self_edges``) or an edge
    joins them in either direction or they share a factor.  With
    ``symmetrize=False`` a directed edge a -> b only lets b attend to a (the
    prediction for b may read its parent); undirected edges and factors stay
    symmetric.  Duplicate edges are deduplicated here.
    """
    model.check_valid()
    n = model.n
    allow = np.zeros((n, n), dtype=bool)
    for e in model.edges:
        if symmetrize:
            allow[e.a, e.b] = True
            allow[e.b, e.a] = True
        elif e.kind == "directed":
            allow[e.b, e.a] = True
        else:
            allow[e.a, e.b] = True
            allow[e.b, e.a] = True
    for f in model.factors:
        members = sorted(f.members)
        for a in members:
            for b in members:
                if a != b:
                    allow[a, b] = True
    if self_edges:
        np.fill_diagonal(allow, True)
    return AttentionMask(allow)


def pack(mask: AttentionMask) -> PackedMask:
    """Pack a mask into neighbor lists of width m = densest row, ids ascending."""
    n = mask.n
    counts = mask.allow.sum(axis=1).astype(np.int32)
    m = int(counts.max()) if n else 0
    neighbors = np.zeros((n, m), dtype=np.int32)
    pad_flags = np.ones((n, m), dtype=bool)
    for i in range(n):
        ids = np.flatnonzero(mask.allow[i])
        neighbors[i, : len(ids)] = ids
        pad_flags[i, : len(ids)] = False
    return PackedMask(n=n, m=m, neighbors=neighbors, pad_flags=pad_flags, counts=counts)


def _bfs_depths(allow: np.ndarray, start: int) -> np.ndarray:
    n = allow.shape[0]
    depth = np.full(n, -1, dtype=np.int64)
    depth[start] = 0
    frontier = [start]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(allow[u]):
                if depth[v] < 0:
                    depth[v] = d
                    nxt.append(int(v))
        frontier = nxt
    return depth


def graph_diameter(mask: AttentionMask) -> int:
    """Max shortest-path length over connected pairs (ignoring self-loops).

    Returns -1 for the degenerate single-node graph with no off-diagonal
    entries; disconnected pairs are ignored (see ``verify_reachability``).
    """
    n = mask.n
    allow = mask.allow.copy()
    np.fill_diagonal(allow, False)
    best = 0
    for s in range(n):
        depth = _bfs_depths(allow, s)
        reachable = depth[depth > 0]
        if len(reachable):
            best = max(best, int(reachable.max()))
    return best


def verify_reachability(mask: AttentionMask) -> bool:
    """True iff the mask graph is connected (every node can reach every node).

    This is the testable surrogate for faithful prediction: with enough
    layers, information from any input node can reach any output node.
    """
    if mask.n == 0:
        return True
    depth = _bfs_depths(mask.allow, 0)
    return bool((depth >= 0).all())


def check_depth(mask: AttentionMask, layers: int) -> bool:
    """Warn when the layer count cannot cover the mask graph's diameter.

    One attention layer passes messages along one edge, so ``layers`` should
    be >= the diameter.  Returns True when the depth is sufficient.
    """
    if not verify_reachability(mask):
        warnings.warn("attention mask graph is disconnected; some nodes can never exchange information", stacklevel=2)
    diameter = graph_diameter(mask)
    if layers < diameter:
        warnings.warn(
            f"{layers} attention layers < mask graph diameter {diameter}; information cannot traverse the graph",
            stacklevel=2,
        )
        return False
    return True


def directed_reachable(model: GraphicalModel, sources: list[int]) -> np.ndarray:
    """Nodes reachable from ``sources`` following directed edges forward and
    undirected/factor links both ways (diagnostic for non-symmetrized masks)."""
    n = model.n
    adj = [[] for _ in range(n)]
    for e in model.edges:
        adj[e.a].append(e.b)
        if e.kind == "undirected":
            adj[e.b].append(e.a)
    for f in model.factors:
        members = sorted(f.members)
        for a in members:
            for b in members:
                if a != b:
                    adj[a].append(b)
    seen = np.zeros(n, dtype=bool)
    stack = list(sources)
    seen[sources] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def random_mask(n: int, per_row: int = 20, seed: int = 0) -> AttentionMask:
    """Each row attends to ``per_row`` random off-diagonal nodes plus itself.

    Rows are sampled independently, so the result is generally asymmetric.
    """
    if per_row >= n:
        raise ValueError(f"per_row={per_row} must be < n={n}")
    rng = np.random.default_rng(seed)
    allow = np.zeros((n, n), dtype=bool)
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        chosen = rng.choice(others, size=per_row, replace=False)
        allow[i, chosen] = True
        allow[i, i] = True
    return AttentionMask(allow)
