from collections.abc import Mapping
from typing import Iterator, Optional

import numpy as np

from services.graph_core import NodeSet


class SparseVector(Mapping):
    """Node-indexed map of nonzero values. Absent nodes are zero."""

    __slots__ = ("_values",)

    def __init__(self, values: Optional[Mapping[int, float]] = None, drop_below: float = 0.0):
        self._values: dict[int, float] = {}
        for node, value in sorted((values or {}).items()):
            value = float(value)
            if abs(value) > drop_below:
                self._values[int(node)] = value

    @classmethod
    def from_dense(cls, array: np.ndarray, drop_below: float = 0.0) -> "SparseVector":
        nonzero = np.flatnonzero(array)
        return cls({int(i): float(array[i]) for i in nonzero}, drop_below=drop_below)

    def __getitem__(self, node: int) -> float:
        return self._values[node]

    def __iter__(self) -> Iterator[int]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, SparseVector):
            return self._values == other._values
        return NotImplemented

    __hash__ = None

    def __repr__(self) -> str:
        return f"SparseVector(nnz={len(self)}, l1={self.l1_norm():.6g})"

    def value(self, node: int) -> float:
        return self._values.get(node, 0.0)

    def support(self) -> NodeSet:
        return tuple(sorted(self._values))

    def l1_norm(self) -> float:
        return float(sum(abs(v) for v in self._values.values()))

    def weighted_sum(self, weights: np.ndarray) -> float:
        """Computes w^T x, e.g. d^T x with the graph degrees."""
        return float(sum(weights[i] * v for i, v in self._values.items()))

    def min_value(self) -> float:
        return min(self._values.values(), default=0.0)

    def to_dense(self, n: int) -> np.ndarray:
        dense = np.zeros(n, dtype=np.float64)
        for i, v in self._values.items():
            dense[i] = v
        return dense

    def to_dict(self) -> dict[str, float]:
        return {str(i): self._values[i] for i in sorted(self._values)}

    def max_abs_diff(self, other: Mapping[int, float]) -> float:
        nodes = set(self._values) | set(other)
        return max((abs(self.value(i) - other.get(i, 0.0)) for i in nodes), default=0.0)

    def dominated_by(self, other: Mapping[int, float], tol: float = 0.0) -> bool:
        """True when self <= other componentwise, up to ``tol``."""
        return all(v <= other.get(i, 0.0) + tol for i, v in self._values.items())
