"""Graph containers and structural utilities.

A :class:`Graph` couples a symmetric, non-negatively weighted adjacency matrix
(no self loops stored) with a constant node-feature matrix and an optional
class label. Batches stack graphs block-diagonally so the whole pipeline runs
on one adjacency; ``node_graph_ids`` (sorted, contiguous) maps rows back to
graphs for segment reductions.

Structural helpers here are shared by the layers, the pooling operator and the
verification lab: symmetric renormalization, h-hop neighborhood patterns,
graph powers, breadth-first distances, permutation relabeling and Prüfer
sequence decoding for random trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engine import (
    SparseMatrix,
    Tensor,
    rsqrt,
    sparse_add_identity,
    sparse_row_sums,
    sparse_scale_entries,
)

__all__ = [
    "Graph",
    "Dataset",
    "GraphBatch",
    "graph_from_edges",
    "batch_graphs",
    "permute_graph",
    "h_hop_membership",
    "graph_power",
    "normalize_gcn",
    "bfs_distances",
    "prufer_to_edges",
    "random_tree_edges",
]


@dataclass(frozen=True)
class Graph:
    """One graph: adjacency (symmetric, non-negative, zero diagonal), features, label."""

    adjacency: SparseMatrix
    features: Tensor
    label: int | None = None

    def __post_init__(self):
        a, x = self.adjacency, self.features
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if x.data.shape[0] != a.shape[0]:
            raise ValueError(
                f"feature rows ({x.data.shape[0]}) must match node count ({a.shape[0]})"
            )
        if a.nnz:
            if np.any(a.values < 0.0):
                raise ValueError("adjacency weights must be non-negative")
            if np.any(a.rows == a.cols):
                raise ValueError("adjacency must not store diagonal entries")
            transposed_keys = a.cols * a.shape[0] + a.rows
            if not np.array_equal(np.sort(transposed_keys), a.pattern_key()):
                raise ValueError("adjacency pattern must be symmetric")
            order = np.argsort(transposed_keys, kind="stable")
            if not np.allclose(a.values[order], a.values, rtol=0.0, atol=0.0):
                raise ValueError("adjacency weights must be symmetric")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        """Undirected edge count (each stored entry pair counts once)."""
        return self.adjacency.nnz // 2

    @property
    def feature_dim(self) -> int:
        return self.features.data.shape[1]


@dataclass(frozen=True)
class Dataset:
    """A named collection of graphs sharing a feature space and label set."""

    name: str
    graphs: list[Graph] = field(default_factory=list)
    n_classes: int = 2

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("dataset needs at least one graph")
        dim = self.graphs[0].feature_dim
        for i, g in enumerate(self.graphs):
            if g.feature_dim != dim:
                raise ValueError(f"graph {i} has feature dim {g.feature_dim}, expected {dim}")
            if g.label is None:
                raise ValueError(f"graph {i} has no label")
            if not 0 <= g.label < self.n_classes:
                raise ValueError(f"graph {i} label {g.label} outside {self.n_classes} classes")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim

    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)


@dataclass
class GraphBatch:
    """Several graphs stacked into one block-diagonal structure."""

    adjacency: SparseMatrix
    features: Tensor
    node_graph_ids: np.ndarray  # sorted, one id per node row
    n_graphs: int
    labels: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


def graph_from_edges(n_nodes: int, edges, features=None, label=None, weights=None) -> Graph:
    """Build a graph from undirected edge pairs (deduplicated, symmetrized).

    ``edges`` is an iterable of ``(u, v)`` pairs; self loops are rejected.
    ``features`` defaults to a constant-one column.
    """
    pairs = {}
    for k, (u, v) in enumerate(edges):
        u, v = int(u), int(v)
        if u == v:
            raise ValueError(f"self loop on node {u}")
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise ValueError(f"edge ({u}, {v}) outside {n_nodes} nodes")
        w = 1.0 if weights is None else float(weights[k])
        key = (min(u, v), max(u, v))
        pairs[key] = w
    if pairs:
        keys = sorted(pairs)
        uv = np.array(keys, dtype=np.int64)
        w = np.array([pairs[k] for k in keys], dtype=np.float64)
        rows = np.concatenate((uv[:, 0], uv[:, 1]))
        cols = np.concatenate((uv[:, 1], uv[:, 0]))
        vals = np.concatenate((w, w))
        adjacency = SparseMatrix.from_coo((n_nodes, n_nodes), rows, cols, vals)
    else:
        adjacency = SparseMatrix.empty((n_nodes, n_nodes))
    if features is None:
        features = np.ones((n_nodes, 1))
    return Graph(adjacency=adjacency, features=Tensor(features), label=label)


def batch_graphs(graphs) -> GraphBatch:
    """Stack graphs block-diagonally; node ids stay sorted by graph."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    sizes = np.array([g.n_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    total = int(offsets[-1])
    rows = np.concatenate([g.adjacency.rows + off for g, off in zip(graphs, offsets)])
    cols = np.concatenate([g.adjacency.cols + off for g, off in zip(graphs, offsets)])
    vals = np.concatenate([g.adjacency.values for g in graphs])
    adjacency = SparseMatrix((total, total), rows, cols, vals)
    features = Tensor(np.vstack([g.features.data for g in graphs]))
    node_graph_ids = np.repeat(np.arange(len(graphs), dtype=np.int64), sizes)
    labels = None
    if all(g.label is not None for g in graphs):
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    return GraphBatch(
        adjacency=adjacency,
        features=features,
        node_graph_ids=node_graph_ids,
        n_graphs=len(graphs),
        labels=labels,
    )


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel nodes: node ``i`` becomes node ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64).ravel()
    n = g.n_nodes
    if perm.shape[0] != n or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm must be a permutation of all node indices")
    adjacency = SparseMatrix.from_coo(
        g.adjacency.shape, perm[g.adjacency.rows], perm[g.adjacency.cols], g.adjacency.values
    )
    features = np.empty_like(g.features.data)
    features[perm] = g.features.data
    return Graph(adjacency=adjacency, features=Tensor(features), label=g.label)


def _pattern_csr(a: SparseMatrix) -> sp.csr_matrix:
    ones = np.ones(a.nnz, dtype=bool)
    return sp.csr_matrix((ones, (a.rows, a.cols)), shape=a.shape)


def _reach_pattern(a: SparseMatrix, steps: int) -> SparseMatrix:
    """Pattern of node pairs within ``steps`` hops (self included), as 1.0 entries."""
    n = a.shape[0]
    base = _pattern_csr(a) + sp.identity(n, dtype=bool, format="csr")
    reach = base
    for _ in range(steps - 1):
        reach = (reach @ base).astype(bool)
    reach = reach.tocsr()
    reach.sum_duplicates()
    reach.sort_indices()
    coo = reach.tocoo()
    return SparseMatrix((n, n), coo.row, coo.col, np.ones(coo.nnz))


def h_hop_membership(a: SparseMatrix, h: int) -> SparseMatrix:
    """Indicator pattern with entry ``(i, j) = 1`` iff ``dist(i, j) <= h``.

    Row ``i`` lists the members of the radius-``h`` cluster centred on node
    ``i`` (always including ``i`` itself).
    """
    if a.shape[0] != a.shape[1]:
        raise ValueError("membership needs a square adjacency")
    if h < 1:
        raise ValueError(f"cluster radius must be >= 1, got {h}")
    return _reach_pattern(a, h)


def graph_power(a: SparseMatrix, p: int) -> SparseMatrix:
    """Adjacency of the graph whose edges join nodes at distance 1..p.

    Unit weights; no self loops.
    """
    if a.shape[0] != a.shape[1]:
        raise ValueError("graph power needs a square adjacency")
    if p < 1:
        raise ValueError(f"power must be >= 1, got {p}")
    reach = _reach_pattern(a, p)
    keep = reach.rows != reach.cols
    return SparseMatrix(a.shape, reach.rows[keep], reach.cols[keep], np.ones(int(keep.sum())))


def normalize_gcn(a: SparseMatrix) -> SparseMatrix:
    """Symmetrically renormalized adjacency ``D^-1/2 (A + I) D^-1/2``.

    Degrees come from the self-loop-augmented matrix, so every row degree is
    at least one and the result is non-negative whenever ``a`` is. The output
    participates in gradient flow when ``a`` does.
    """
    augmented = sparse_add_identity(a)
    degrees = sparse_row_sums(augmented)
    inv_sqrt = rsqrt(degrees)
    return sparse_scale_entries(augmented, inv_sqrt, inv_sqrt)


def bfs_distances(a: SparseMatrix) -> np.ndarray:
    """All-pairs hop distances (``-1`` for unreachable) via repeated frontier expansion."""
    n = a.shape[0]
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    if a.nnz == 0 or n == 0:
        return dist
    frontier = _pattern_csr(a) + sp.identity(n, dtype=bool, format="csr")
    reached = sp.identity(n, dtype=bool, format="csr")
    step = 1
    while step <= n:
        nxt = (reached @ frontier).astype(bool).tocsr()
        fresh = nxt.toarray() & (dist < 0)
        if not fresh.any():
            break
        dist[fresh] = step
        reached = nxt
        step += 1
    return dist


def prufer_to_edges(sequence, n_nodes: int) -> list[tuple[int, int]]:
    """Decode a Prüfer sequence of length ``n_nodes - 2`` into tree edges.

    The decoding is the standard bijection between sequences over
    ``{0..n-1}`` and labeled trees on ``n`` nodes.
    """
    seq = [int(v) for v in sequence]
    if n_nodes < 2:
        raise ValueError("a tree needs at least two nodes")
    if len(seq) != n_nodes - 2:
        raise ValueError(f"sequence length must be {n_nodes - 2}, got {len(seq)}")
    if seq and (min(seq) < 0 or max(seq) >= n_nodes):
        raise ValueError("sequence entries must be node labels")
    degree = np.ones(n_nodes, dtype=np.int64)
    for v in seq:
        degree[v] += 1
    edges: list[tuple[int, int]] = []
    # Smallest-leaf-first decoding with a moving pointer.
    ptr = 0
    leaf = -1
    for v in seq:
        if leaf < 0:
            while degree[ptr] != 1:
                ptr += 1
            leaf = ptr
        edges.append((leaf, v))
        degree[leaf] -= 1
        degree[v] -= 1
        if degree[v] == 1 and v < ptr:
            leaf = v
        else:
            leaf = -1
            ptr += 1
    remaining = np.flatnonzero(degree == 1)
    edges.append((int(remaining[0]), int(remaining[1])))
    return edges


def random_tree_edges(n_nodes: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Edges of a uniformly random labeled tree on ``n_nodes`` nodes."""
    if n_nodes == 1:
        return []
    if n_nodes == 2:
        return [(0, 1)]
    seq = rng.integers(0, n_nodes, size=n_nodes - 2)
    return prufer_to_edges(seq, n_nodes)
