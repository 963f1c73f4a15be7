import logging
import math
import time
from collections import deque
from collections.abc import Mapping
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.sparse.linalg import spsolve

from services import settings
from services.errors import InvalidParametersError, LocalityBudgetExceeded
from services.graph_core import Graph, NodeSet, volume
from services.sparse_vector import SparseVector

logger = logging.getLogger(__name__)

# Guards against a tol below floating-point resolution
MAX_REFRESH_ROUNDS = 50
# Gradient changes below this are rounding noise
GRADIENT_FLOOR = 1e-15


class PageRankProblem(BaseModel):
    """min_x 1/2 x^T Q x - alpha s^T x + rho alpha ||Dx||_1 with Q = alpha D + (1 - alpha)/2 L."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    graph: Graph
    seed: dict[int, float]
    alpha: float = Field(gt=0, lt=1)
    rho: float = Field(ge=0)

    @model_validator(mode="after")
    def check_seed(self) -> "PageRankProblem":
        if not self.seed:
            raise ValueError("seed must contain at least one node")
        for node, mass in self.seed.items():
            if not 0 <= node < self.graph.n:
                raise ValueError(f"seed node {node} out of range for n={self.graph.n}")
            if mass < 0:
                raise ValueError(f"seed mass at node {node} is negative")
            if self.graph.degree(node) <= 0:
                raise ValueError(f"seed node {node} has zero degree")
        if not math.isclose(sum(self.seed.values()), 1.0, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"seed mass sums to {sum(self.seed.values())}, expected 1")
        return self

    @classmethod
    def single_seed(cls, graph: Graph, node: int, alpha: float, rho: float) -> "PageRankProblem":
        return cls(graph=graph, seed={node: 1.0}, alpha=alpha, rho=rho)

    def with_rho(self, rho: float) -> "PageRankProblem":
        return PageRankProblem(graph=self.graph, seed=dict(self.seed), alpha=self.alpha, rho=rho)

    @property
    def seed_nodes(self) -> NodeSet:
        return tuple(sorted(self.seed))

    def threshold(self, i: int) -> float:
        """The l1 penalty slope rho * alpha * d_i at node i."""
        return self.rho * self.alpha * self.graph.degree(i)


class SolveStats(BaseModel):
    algorithm: str = "l1pr"
    iterations: int = 0
    touched: NodeSet = ()
    wall_time: float = 0.0
    max_kkt_violation: float = 0.0
    refreshes: int = 0
    converged: bool = True

    @property
    def touched_count(self) -> int:
        return len(self.touched)

    def summary(self, timing: bool = True) -> dict:
        summary = {
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "touched_count": self.touched_count,
            "max_kkt_violation": self.max_kkt_violation,
            "refreshes": self.refreshes,
            "converged": self.converged,
        }
        if timing:
            summary["wall_time"] = self.wall_time
        return summary


class KKTReport(BaseModel):
    max_violation: float
    worst_node: Optional[int] = None
    max_active_violation: float = 0.0
    max_inactive_violation: float = 0.0
    negative_entries: list[int] = Field(default_factory=list)
    checked: int = 0
    tol: float
    passed: bool


def gradient(prob: PageRankProblem, x: Mapping[int, float], i: int) -> float:
    g, a = prob.graph, prob.alpha
    neighbors, weights = g.neighbors(i)
    spread = sum(w * x.get(j, 0.0) for j, w in zip(neighbors, weights))
    return 0.5 * (1 + a) * g.degree(i) * x.get(i, 0.0) - 0.5 * (1 - a) * spread - a * prob.seed.get(i, 0.0)


class _CoordinateDescent:
    """Proximal coordinate descent over a FIFO queue of violating nodes.

    Gradients are cached for every touched node and updated in O(d_i) per step.
    When the queue drains they are recomputed from scratch, and the solve only
    ends once the recomputed gradients have no violator left.
    """

    def __init__(
        self,
        prob: PageRankProblem,
        tol: float,
        max_touch: Optional[int] = None,
        allowed: Optional[set[int]] = None,
    ):
        self.prob = prob
        self.tol = tol
        self.max_touch = max_touch
        self.allowed = allowed
        self.x: dict[int, float] = {}
        self.grad: dict[int, float] = {i: -prob.alpha * m for i, m in prob.seed.items()}
        self.touched: set[int] = set(self.grad)
        self.queue: deque[int] = deque()
        self.queued: set[int] = set()
        self.iterations = 0
        self.refreshes = 0
        self.converged = True
        self._plus = 0.5 * (1 + prob.alpha)
        self._minus = 0.5 * (1 - prob.alpha)

    def _violates(self, i: int) -> bool:
        if self.allowed is not None and i not in self.allowed:
            return False
        shifted = self.grad[i] + self.prob.threshold(i)
        slack = max(self.tol * self.prob.threshold(i), GRADIENT_FLOOR)
        if self.x.get(i, 0.0) > 0:
            return abs(shifted) > slack
        return shifted < -slack

    def _enqueue_violators(self, nodes: Iterable[int]) -> None:
        for i in nodes:
            if i not in self.queued and self._violates(i):
                self.queue.append(i)
                self.queued.add(i)

    def _update(self, i: int) -> None:
        g = self.prob.graph
        d_i = g.degree(i)
        old = self.x.get(i, 0.0)
        new = max(0.0, old - (self.grad[i] + self.prob.threshold(i)) / (self._plus * d_i))
        if new <= settings.ZERO_THRESHOLD:
            new = 0.0
        delta = new - old
        if new > 0:
            self.x[i] = new
        else:
            self.x.pop(i, None)
        self.iterations += 1
        if delta == 0.0:
            return

        self.grad[i] += self._plus * d_i * delta
        neighbors, weights = g.neighbors(i)
        for j, w in zip(neighbors, weights):
            self.grad[j] = self.grad.get(j, 0.0) - self._minus * w * delta
            self.touched.add(j)
        self._check_budget()
        self._enqueue_violators(neighbors)
        self._enqueue_violators((i,))

    def _check_budget(self) -> None:
        if self.max_touch is not None and len(self.touched) > self.max_touch:
            raise LocalityBudgetExceeded(self.max_touch, SparseVector(self.x), self._stats(0.0))

    def _refresh(self) -> None:
        self.refreshes += 1
        for i in self.touched:
            self.grad[i] = gradient(self.prob, self.x, i)
        logger.debug(f"Refreshed {len(self.touched)} cached gradients")

    def _stats(self, elapsed: float) -> SolveStats:
        return SolveStats(
            iterations=self.iterations,
            touched=tuple(sorted(self.touched)),
            wall_time=elapsed,
            refreshes=self.refreshes,
            converged=self.converged,
        )

    def run(self) -> tuple[SparseVector, SolveStats]:
        start = time.perf_counter()
        self._check_budget()
        self._enqueue_violators(sorted(self.grad))
        while True:
            while self.queue:
                i = self.queue.popleft()
                self.queued.discard(i)
                if self._violates(i):
                    self._update(i)
            self._refresh()
            self._enqueue_violators(sorted(self.touched))
            if not self.queue:
                break
            if self.refreshes >= MAX_REFRESH_ROUNDS:
                self.converged = False
                logger.warning(
                    f"Stopping after {self.refreshes} refresh rounds with {len(self.queue)} nodes "
                    f"still above tol {self.tol:.1e}"
                )
                break
        solution = SparseVector(self.x, drop_below=settings.ZERO_THRESHOLD)
        return solution, self._stats(time.perf_counter() - start)


def solve(
    prob: PageRankProblem,
    tol: float = settings.DEFAULT_TOL,
    max_touch: Optional[int] = None,
) -> tuple[SparseVector, SolveStats]:
    """Strongly local solve of the l1-regularized problem for rho > 0."""
    if prob.rho <= 0:
        raise InvalidParametersError("solve needs rho > 0; use solve_unregularized for rho = 0")
    if tol <= 0:
        raise InvalidParametersError(f"tol must be positive, got {tol}")

    solution, stats = _CoordinateDescent(prob, tol, max_touch).run()
    stats.max_kkt_violation = check_kkt(prob, solution, tol).max_violation
    logger.info(
        f"l1pr solve rho={prob.rho:g} alpha={prob.alpha:g}: {stats.iterations} updates, "
        f"support {len(solution)}, touched {stats.touched_count}, {stats.wall_time:.3f}s"
    )
    return solution, stats


def solve_reduced(
    prob: PageRankProblem,
    nodes: Iterable[int],
    tol: float = settings.DEFAULT_TOL,
) -> SparseVector:
    """Solves the problem with x held at zero outside ``nodes``; degrees stay those of the full graph."""
    allowed = set(nodes)
    if not set(prob.seed) <= allowed:
        raise InvalidParametersError("the reduced node set must contain every seed node")
    if prob.rho <= 0:
        raise InvalidParametersError("solve_reduced needs rho > 0")
    solution, stats = _CoordinateDescent(prob, tol, allowed=allowed).run()
    logger.debug(f"Reduced solve on {len(allowed)} nodes: support {len(solution)}")
    return solution


def solve_path(
    prob: PageRankProblem,
    rhos: Iterable[float],
    tol: float = settings.DEFAULT_TOL,
    max_touch: Optional[int] = None,
) -> list[tuple[float, SparseVector, SolveStats]]:
    """Independent solves over a rho grid, in the order given."""
    results = []
    for rho in rhos:
        solution, stats = solve(prob.with_rho(rho), tol, max_touch)
        results.append((rho, solution, stats))
    return results


def solve_unregularized(prob: PageRankProblem, tol: float = settings.DEFAULT_TOL) -> SparseVector:
    """rho = 0: a direct sparse solve of Q x = alpha s over the seed's component."""
    g, a = prob.graph, prob.alpha
    component = g.component_of(prob.seed_nodes)
    sub, ids = g.induced_subgraph(component)
    position = {node: k for k, node in enumerate(ids)}

    q_matrix = (
        sp.diags(0.5 * (1 + a) * sub.degrees) - 0.5 * (1 - a) * sub.adjacency_matrix()
    ).tocsc()
    rhs = np.zeros(sub.n, dtype=np.float64)
    for node, mass in prob.seed.items():
        rhs[position[node]] = a * mass

    y = np.atleast_1d(spsolve(q_matrix, rhs))
    residual = float(np.abs(q_matrix @ y - rhs).max())
    if residual > tol:
        logger.warning(f"Unregularized solve residual {residual:.3e} exceeds tol {tol:.1e}")
    logger.info(f"Unregularized solve over a component of {sub.n} nodes, residual {residual:.3e}")
    return SparseVector({ids[k]: y[k] for k in range(sub.n)}, drop_below=settings.ZERO_THRESHOLD)


def check_kkt(prob: PageRankProblem, x: Mapping[int, float], tol: float = settings.DEFAULT_TOL) -> KKTReport:
    """Scaled optimality violations over supp(x), its neighbors and the seeds.

    Active nodes need grad_i = -rho alpha d_i; zero nodes need grad_i in
    [-rho alpha d_i, 0]. Violations are divided by rho alpha d_i (alpha d_i
    when rho = 0).
    """
    g, a, rho = prob.graph, prob.alpha, prob.rho
    nodes = set(prob.seed)
    negative = []
    for i, value in x.items():
        if value < 0:
            negative.append(i)
        if value != 0:
            nodes.add(i)
            nodes.update(g.neighbors(i)[0])

    worst_node, worst = None, 0.0
    active_max = inactive_max = 0.0
    for i in sorted(nodes):
        d_i = g.degree(i)
        if d_i <= 0:
            continue
        scale = (rho if rho > 0 else 1.0) * a * d_i
        shifted = gradient(prob, x, i) + rho * a * d_i
        if x.get(i, 0.0) > 0:
            violation = abs(shifted) / scale
            active_max = max(active_max, violation)
        else:
            violation = max(-shifted, shifted - rho * a * d_i, 0.0) / scale
            inactive_max = max(inactive_max, violation)
        if violation > worst:
            worst_node, worst = i, violation

    return KKTReport(
        max_violation=worst,
        worst_node=worst_node,
        max_active_violation=active_max,
        max_inactive_violation=inactive_max,
        negative_entries=sorted(negative),
        checked=len(nodes),
        tol=tol,
        passed=worst <= tol and not negative,
    )


def support_volume_bound(prob: PageRankProblem, x: SparseVector) -> tuple[float, float]:
    """Returns (Vol(supp(x)), (1 - d^T x) / rho)."""
    vol = volume(prob.graph, x.support())
    if prob.rho <= 0:
        return vol, math.inf
    return vol, (1.0 - x.weighted_sum(prob.graph.degrees)) / prob.rho


def volume_bound_holds(prob: PageRankProblem, x: SparseVector, tol: float = settings.DEFAULT_TOL) -> bool:
    vol, bound = support_volume_bound(prob, x)
    return vol <= bound * (1.0 + tol)
