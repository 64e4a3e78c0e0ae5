"""Physical transit topology and the renormalized adjacency operator.

Both types are immutable after construction and freely shareable across
threads.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PhysicalGraph:
    """Undirected, unweighted station-link graph.

    Edges are stored as index pairs (i, j) with i < j in registry order,
    deduplicated and sorted. Self-loops are rejected; isolated nodes are
    allowed (real registries contain stations missing from the link file).
    """

    node_ids: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    @classmethod
    def from_edges(
        cls, node_ids: Sequence[str], edge_pairs: Iterable[tuple[str, str]]
    ) -> "PhysicalGraph":
        index = {n: i for i, n in enumerate(node_ids)}
        seen: set[tuple[int, int]] = set()
        for lineno, (a, b) in enumerate(edge_pairs, start=1):
            if a not in index:
                raise DataError(f"unknown node id {a!r} at line {lineno}")
            if b not in index:
                raise DataError(f"unknown node id {b!r} at line {lineno}")
            if a == b:
                raise DataError(f"self-loop on {a!r} at line {lineno}")
            i, j = index[a], index[b]
            seen.add((min(i, j), max(i, j)))
        return cls(tuple(node_ids), tuple(sorted(seen)))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix."""
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """The symmetric operator D^(-1/2) (A + I) D^(-1/2).

    D is the degree matrix of A + I, so every diagonal is positive and the
    spectral radius is at most 1. For an edgeless graph this is exactly the
    identity, which makes one graph-convolution layer degenerate to an
    ordinary affine layer.
    """

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError(f"adjacency operator must be square, got {m.shape}")
        if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
            raise DataError("adjacency operator must be symmetric within 1e-12")
        if np.any(m < 0):
            raise DataError("adjacency operator entries must be nonnegative")
        object.__setattr__(self, "matrix", m)

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def build_physical_graph(edge_csv, node_registry: Sequence[str]) -> PhysicalGraph:
    """Parse the physical-edge CSV (`node_a,node_b`) against a registry."""
    if isinstance(edge_csv, (str, bytes)):
        edge_csv = io.StringIO(
            edge_csv if isinstance(edge_csv, str) else edge_csv.decode()
        )
    rows = iter(csv.reader(edge_csv))
    header = next(rows, None)
    if header is None:
        raise DataError("empty edge input: missing header ['node_a', 'node_b']")
    got = [c.strip() for c in header]
    if got[:2] != ["node_a", "node_b"]:
        raise DataError(f"bad edge header {got}, expected ['node_a', 'node_b']")
    pairs = []
    for row in rows:
        if not row:
            continue
        if len(row) < 2:
            raise DataError(f"edge row with {len(row)} fields")
        pairs.append((row[0].strip(), row[1].strip()))
    return PhysicalGraph.from_edges(node_registry, pairs)


def write_edge_csv(graph: PhysicalGraph, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["node_a", "node_b"])
    for i, j in graph.edges:
        writer.writerow([graph.node_ids[i], graph.node_ids[j]])


def normalize_adjacency(graph: PhysicalGraph) -> NormalizedAdjacency:
    """Build D^(-1/2) (A + I) D^(-1/2) from the 0/1 adjacency of the graph."""
    if graph.n_nodes < 1:
        raise DataError("graph must have at least one node")
    a_tilde = graph.adjacency() + np.eye(graph.n_nodes)
    inv_sqrt_deg = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    matrix = a_tilde * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    return NormalizedAdjacency(matrix)
