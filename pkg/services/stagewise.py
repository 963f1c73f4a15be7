import heapq
import logging
import time
from typing import Iterable, Optional

from pydantic import BaseModel, ConfigDict

from services import settings
from services.errors import InvalidParametersError, LocalityBudgetExceeded, OutOfPathRangeError
from services.l1pr_solver import PageRankProblem, solve
from services.sparse_vector import SparseVector

logger = logging.getLogger(__name__)

# heap entries allowed per touched node before stale ones are purged
HEAP_SLACK = 4


class PathPoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int
    iterate: SparseVector
    l1_norm: float
    implied_rho: float


class SolutionPath(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: list[PathPoint]
    eta: float
    alpha: float
    stride: int
    steps: int
    stop_reason: str

    def implied_rho_range(self) -> tuple[float, float]:
        rhos = [point.implied_rho for point in self.points]
        return min(rhos), max(rhos)

    def points_by_support_size(self) -> dict[int, PathPoint]:
        """First stored point reaching each support size."""
        by_size: dict[int, PathPoint] = {}
        for point in self.points:
            by_size.setdefault(len(point.iterate), point)
        return by_size


class _Stagewise:
    def __init__(self, prob: PageRankProblem, eta: float, stride: int, max_touch: Optional[int]):
        self.prob = prob
        self.eta = eta
        self.stride = stride
        self.max_touch = max_touch
        self.x: dict[int, float] = {}
        self.l1 = 0.0
        self.grad: dict[int, float] = {i: -prob.alpha * m for i, m in prob.seed.items()}
        self._rebuild_heap()
        self.steps = 0
        self.points: list[PathPoint] = []
        self._plus = 0.5 * (1 + prob.alpha)
        self._minus = 0.5 * (1 - prob.alpha)

    def _key(self, i: int) -> float:
        return self.grad[i] / self.prob.graph.degree(i)

    def _rebuild_heap(self) -> None:
        self.heap = [(self._key(i), i) for i in self.grad]
        heapq.heapify(self.heap)

    def peek(self) -> tuple[float, int]:
        """Smallest d_i^-1 grad_i over touched nodes, lowest id on ties; stale entries are dropped."""
        while self.heap:
            key, i = self.heap[0]
            if key == self._key(i):
                return key, i
            heapq.heappop(self.heap)
        return 0.0, -1

    def implied_rho(self) -> float:
        return max(0.0, -min(self.peek()[0], 0.0) / self.prob.alpha)

    def record(self) -> None:
        if self.points and self.points[-1].step == self.steps:
            return
        self.points.append(
            PathPoint(
                step=self.steps,
                iterate=SparseVector(self.x),
                l1_norm=self.l1,
                implied_rho=self.implied_rho(),
            )
        )

    def step(self, i: int) -> None:
        g = self.prob.graph
        d_i = g.degree(i)
        increment = self.eta / d_i
        entered = i not in self.x
        self.x[i] = self.x.get(i, 0.0) + increment
        self.l1 += increment
        self.grad[i] += self._plus * self.eta
        heapq.heappush(self.heap, (self._key(i), i))

        neighbors, weights = g.neighbors(i)
        for j, w in zip(neighbors, weights):
            self.grad[j] = self.grad.get(j, 0.0) - self._minus * w * increment
            heapq.heappush(self.heap, (self._key(j), j))
        if len(self.heap) > HEAP_SLACK * len(self.grad):
            self._rebuild_heap()
        self.steps += 1
        if self.max_touch is not None and len(self.grad) > self.max_touch:
            self.record()
            raise LocalityBudgetExceeded(self.max_touch, self.path("max_touch"))
        if entered or self.steps % self.stride == 0:
            self.record()

    def path(self, stop_reason: str) -> SolutionPath:
        return SolutionPath(
            points=list(self.points),
            eta=self.eta,
            alpha=self.prob.alpha,
            stride=self.stride,
            steps=self.steps,
            stop_reason=stop_reason,
        )


def stagewise_path(
    prob: PageRankProblem,
    eta: Optional[float] = None,
    min_rho: Optional[float] = None,
    max_iters: Optional[int] = None,
    max_l1: Optional[float] = None,
    stride: int = settings.STAGEWISE_STRIDE,
    max_touch: Optional[int] = None,
) -> SolutionPath:
    """Greedy forward stagewise path; ``prob.rho`` is ignored.

    Each step adds eta / d_i to the node with the smallest d_i^-1 grad_i. The
    start point, every ``stride``-th iterate, every support change and the final
    iterate are stored.
    """
    eta = settings.STAGEWISE_ETA * prob.alpha if eta is None else eta
    if eta <= 0:
        raise InvalidParametersError(f"eta must be positive, got {eta}")
    if stride < 1:
        raise InvalidParametersError(f"stride must be at least 1, got {stride}")
    if min_rho is None and max_iters is None and max_l1 is None:
        raise InvalidParametersError("stagewise needs at least one of min_rho, max_iters, max_l1")

    start = time.perf_counter()
    walker = _Stagewise(prob, eta, stride, max_touch)
    walker.record()
    while True:
        key, i = walker.peek()
        if key >= 0:
            reason = "converged"
            break
        if min_rho is not None and -key / prob.alpha <= min_rho:
            reason = "min_rho"
            break
        if max_iters is not None and walker.steps >= max_iters:
            reason = "max_iters"
            break
        if max_l1 is not None and walker.l1 >= max_l1:
            reason = "max_l1"
            break
        walker.step(i)
    walker.record()

    path = walker.path(reason)
    logger.info(
        f"Stagewise eta={eta:g}: {path.steps} steps, {len(path.points)} stored points, "
        f"stopped on {reason} in {time.perf_counter() - start:.3f}s"
    )
    return path


def closest_point(path: SolutionPath, rho: float) -> PathPoint:
    """Stored point whose implied rho is nearest ``rho``; ties go to the earlier point."""
    return min(path.points, key=lambda point: abs(point.implied_rho - rho))


def path_to_solution(path: SolutionPath, rho: float) -> SparseVector:
    lowest, _ = path.implied_rho_range()
    if rho >= path.points[0].implied_rho:
        return path.points[0].iterate
    if rho < lowest:
        raise OutOfPathRangeError(f"rho={rho:g} is below the path's smallest implied rho {lowest:g}")
    return closest_point(path, rho).iterate


def path_sup_distance(
    prob: PageRankProblem,
    path: SolutionPath,
    rhos: Iterable[float],
    tol: float = settings.DEFAULT_TOL,
) -> float:
    """Max l-inf gap between stored points and exact solutions at each point's own implied rho."""
    worst = 0.0
    exact_cache: dict[int, float] = {}
    for rho in rhos:
        point = closest_point(path, rho)
        if point.implied_rho <= 0:
            continue
        if point.step not in exact_cache:
            exact, _ = solve(prob.with_rho(point.implied_rho), tol)
            exact_cache[point.step] = point.iterate.max_abs_diff(exact)
        worst = max(worst, exact_cache[point.step])
    return worst
