import logging
from typing import Iterable, Optional, TextIO, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from services.errors import (
    DegenerateSetError,
    EmptyGraphError,
    GraphFormatError,
    InvalidParametersError,
)

logger = logging.getLogger(__name__)

# Sorted tuple of unique node ids
NodeSet = tuple[int, ...]


class Graph:
    """Immutable weighted undirected graph stored as a symmetric CSR matrix.

    Degrees, total volume and connected components are computed once at
    construction. Neighbor lists are also kept as plain Python lists because the
    solvers walk them one node at a time.
    """

    def __init__(self, adjacency: sp.spmatrix, warn_disconnected: bool = True):
        matrix = sp.csr_matrix(adjacency, dtype=np.float64, copy=True)
        if matrix.shape[0] != matrix.shape[1]:
            raise InvalidParametersError(f"adjacency must be square, got {matrix.shape}")
        matrix.sum_duplicates()
        matrix.sort_indices()
        if matrix.nnz and not np.all(matrix.data > 0):
            raise InvalidParametersError("edge weights must be strictly positive")
        if matrix.diagonal().any():
            raise InvalidParametersError("self-loops are not allowed")
        if (matrix != matrix.T).nnz:
            raise InvalidParametersError("adjacency must be symmetric")

        self._matrix = matrix
        self._n = matrix.shape[0]
        self._indptr = matrix.indptr.tolist()
        self._indices = matrix.indices.tolist()
        self._weights = matrix.data.tolist()

        degrees = np.asarray(matrix.sum(axis=1), dtype=np.float64).ravel()
        degrees.setflags(write=False)
        self._degrees = degrees
        self._degree_list = degrees.tolist()
        self._total_volume = float(degrees.sum())

        n_components, labels = connected_components(matrix, directed=False)
        self._n_components = int(n_components)
        self._component_labels = labels
        if warn_disconnected and self._n_components > 1:
            logger.warning(f"Graph has {self._n_components} connected components")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]], **kwargs) -> "Graph":
        """Builds a graph from (u, v, w) triples; repeated pairs have their weights summed."""
        rows, cols, weights = [], [], []
        for u, v, w in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidParametersError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                raise InvalidParametersError(f"self-loop at node {u}")
            if not w > 0:
                raise InvalidParametersError(f"edge ({u}, {v}) has non-positive weight {w}")
            rows += (u, v)
            cols += (v, u)
            weights += (w, w)
        matrix = sp.coo_matrix(
            (np.asarray(weights, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n, n),
        ).tocsr()
        return cls(matrix, **kwargs)

    @classmethod
    def from_adjacency(cls, adjacency: Union[np.ndarray, sp.spmatrix], **kwargs) -> "Graph":
        if sp.issparse(adjacency):
            return cls(adjacency, **kwargs)
        return cls(sp.csr_matrix(np.asarray(adjacency, dtype=np.float64)), **kwargs)

    @property
    def n(self) -> int:
        return self._n

    @property
    def num_edges(self) -> int:
        return self._matrix.nnz // 2

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def total_volume(self) -> float:
        return self._total_volume

    @property
    def is_connected(self) -> bool:
        return self._n_components <= 1

    @property
    def n_components(self) -> int:
        return self._n_components

    def degree(self, i: int) -> float:
        return self._degree_list[i]

    def neighbors(self, i: int) -> tuple[list[int], list[float]]:
        start, end = self._indptr[i], self._indptr[i + 1]
        return self._indices[start:end], self._weights[start:end]

    def adjacency_matrix(self) -> sp.csr_matrix:
        return self._matrix.copy()

    def component_of(self, nodes: Iterable[int]) -> NodeSet:
        """All nodes sharing a connected component with any of ``nodes``."""
        labels = np.unique(self._component_labels[list(nodes)])
        return tuple(np.flatnonzero(np.isin(self._component_labels, labels)).tolist())

    def induced_subgraph(self, nodes: Iterable[int]) -> tuple["Graph", NodeSet]:
        """Returns the subgraph on ``nodes`` and the original id of each new id."""
        keep = as_node_set(self, nodes)
        index = np.asarray(keep, dtype=np.int64)
        sub = self._matrix[index][:, index]
        return Graph(sub, warn_disconnected=False), keep

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self._n == other._n
            and self._indptr == other._indptr
            and self._indices == other._indices
            and self._weights == other._weights
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"Graph(n={self._n}, edges={self.num_edges}, volume={self._total_volume:g})"


def as_node_set(g: Graph, nodes: Iterable[int]) -> NodeSet:
    result = tuple(sorted({int(i) for i in nodes}))
    if result and (result[0] < 0 or result[-1] >= g.n):
        raise InvalidParametersError(f"node ids must lie in [0, {g.n})")
    return result


def complement(g: Graph, b: Iterable[int]) -> NodeSet:
    members = set(b)
    return tuple(i for i in range(g.n) if i not in members)


def volume(g: Graph, b: Iterable[int]) -> float:
    index = list(b)
    if not index:
        return 0.0
    return float(g.degrees[index].sum())


def cut(g: Graph, b: Iterable[int]) -> float:
    members = set(b)
    total = 0.0
    for i in members:
        neighbors, weights = g.neighbors(i)
        for j, w in zip(neighbors, weights):
            if j not in members:
                total += w
    return total


def conductance(g: Graph, b: Iterable[int]) -> float:
    members = set(b)
    if not members or len(members) == g.n:
        raise DegenerateSetError("conductance needs a nonempty proper subset of the nodes")
    crossing = cut(g, members)
    if crossing == 0.0:
        return 0.0
    inside = volume(g, members)
    return crossing / min(inside, g.total_volume - inside)


def _split_line(raw: str) -> list[str]:
    return raw.split("#", 1)[0].split()


def _parse_header(raw: str, line_number: int) -> Optional[int]:
    header = raw.strip()[1:].strip()
    if not header.startswith("nodes:"):
        return None
    try:
        return int(header.split(":", 1)[1])
    except ValueError:
        raise GraphFormatError(f"bad node count header {raw.strip()!r}", line_number)


def _parse_weight(parts: list[str], line_number: int) -> float:
    try:
        weight = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise GraphFormatError(f"bad weight {parts[2]!r}", line_number)
    if not (weight > 0 and np.isfinite(weight)):
        raise GraphFormatError(f"weight must be positive and finite, got {weight}", line_number)
    return weight


def load_edge_list(stream: TextIO) -> Graph:
    """Reads ``u v [w]`` lines with 0-based ids. A ``# nodes: n`` header fixes n."""
    declared_n = None
    edges = []
    for line_number, raw in enumerate(stream, start=1):
        if raw.lstrip().startswith("#"):
            declared_n = _parse_header(raw, line_number) or declared_n
            continue
        parts = _split_line(raw)
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"expected 'u v [w]', got {raw.strip()!r}", line_number)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"node ids must be integers, got {raw.strip()!r}", line_number)
        if u < 0 or v < 0:
            raise GraphFormatError("node ids must be non-negative", line_number)
        if u == v:
            raise GraphFormatError(f"self-loop at node {u}", line_number)
        edges.append((u, v, _parse_weight(parts, line_number)))

    if not edges:
        raise EmptyGraphError()
    n = max(max(u, v) for u, v, _ in edges) + 1
    if declared_n is not None:
        if declared_n < n:
            raise GraphFormatError(f"header declares {declared_n} nodes but ids reach {n - 1}")
        n = declared_n
    graph = Graph.from_edges(n, edges)
    logger.info(f"Loaded {graph}")
    return graph


def load_labeled_edge_list(stream: TextIO) -> tuple[Graph, list[str]]:
    """Like load_edge_list but with arbitrary labels, remapped to ids by first appearance."""
    ids: dict[str, int] = {}
    edges = []
    for line_number, raw in enumerate(stream, start=1):
        parts = _split_line(raw)
        if not parts:
            continue
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"expected 'u v [w]', got {raw.strip()!r}", line_number)
        if parts[0] == parts[1]:
            raise GraphFormatError(f"self-loop at node {parts[0]}", line_number)
        u = ids.setdefault(parts[0], len(ids))
        v = ids.setdefault(parts[1], len(ids))
        edges.append((u, v, _parse_weight(parts, line_number)))
    if not edges:
        raise EmptyGraphError()
    return Graph.from_edges(len(ids), edges), list(ids)


def save_edge_list(g: Graph, stream: TextIO) -> None:
    stream.write(f"# nodes: {g.n}\n")
    for i in range(g.n):
        neighbors, weights = g.neighbors(i)
        for j, w in zip(neighbors, weights):
            if i < j:
                stream.write(f"{i} {j} {w!r}\n")


def write_label_map(labels: list[str], stream: TextIO) -> None:
    for node, label in enumerate(labels):
        stream.write(f"{node} {label}\n")
