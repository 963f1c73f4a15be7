import logging
import time
from collections import deque
from collections.abc import Mapping
from typing import Literal, Optional

from pydantic import BaseModel, Field

from services import settings
from services.errors import InvalidParametersError, LocalityBudgetExceeded
from services.l1pr_solver import PageRankProblem, SolveStats, gradient
from services.sparse_vector import SparseVector

logger = logging.getLogger(__name__)

Order = Literal["fifo", "lifo"]


class ApprResidualReport(BaseModel):
    max_scaled_gradient: float
    threshold: float
    flagged: list[int] = Field(default_factory=list)
    checked: int = 0
    passed: bool


class ApprState:
    """Push iterate for APPR.

    Pushing node i sets x_i += -grad_i / d_i, which scales grad_i by (1 - alpha)/2
    and lowers each neighbor's gradient by (1 - alpha)/2 * w_ij * dx. Starting from
    zero every gradient stays non-positive.
    """

    def __init__(
        self,
        prob: PageRankProblem,
        order: Order = "fifo",
        refresh_interval: int = settings.APPR_REFRESH_INTERVAL,
        max_touch: Optional[int] = None,
    ):
        if order not in ("fifo", "lifo"):
            raise InvalidParametersError(f"unknown push order {order!r}")
        self.prob = prob
        self.order = order
        self.refresh_interval = refresh_interval
        self.max_touch = max_touch
        self.x: dict[int, float] = {}
        self.grad: dict[int, float] = {i: -prob.alpha * m for i, m in prob.seed.items()}
        self.touched: set[int] = set(self.grad)
        self.queue: deque[int] = deque()
        self.queued: set[int] = set()
        self.pushes = 0
        self.refreshes = 0
        self._minus = 0.5 * (1 - prob.alpha)
        logger.debug(f"APPR state for seeds {prob.seed_nodes} with {order} order")

    def violates(self, i: int) -> bool:
        return self.grad[i] <= -self.prob.threshold(i)

    def _enqueue(self, i: int) -> None:
        if i not in self.queued and self.violates(i):
            self.queue.append(i)
            self.queued.add(i)

    def _next(self) -> int:
        i = self.queue.popleft() if self.order == "fifo" else self.queue.pop()
        self.queued.discard(i)
        return i

    def push(self, i: int) -> None:
        g = self.prob.graph
        step = -self.grad[i] / g.degree(i)
        self.x[i] = self.x.get(i, 0.0) + step
        self.grad[i] *= self._minus
        self.pushes += 1

        neighbors, weights = g.neighbors(i)
        for j, w in zip(neighbors, weights):
            self.grad[j] = self.grad.get(j, 0.0) - self._minus * w * step
            self.touched.add(j)
        if self.max_touch is not None and len(self.touched) > self.max_touch:
            raise LocalityBudgetExceeded(self.max_touch, SparseVector(self.x), self.stats(0.0))
        for j in neighbors:
            self._enqueue(j)
        self._enqueue(i)

    def refresh(self) -> None:
        self.refreshes += 1
        for i in self.touched:
            self.grad[i] = gradient(self.prob, self.x, i)
        for i in sorted(self.touched):
            self._enqueue(i)

    def max_cache_error(self) -> float:
        """Largest gap between a cached gradient and its recomputed value."""
        return max(
            (abs(self.grad[i] - gradient(self.prob, self.x, i)) for i in self.touched),
            default=0.0,
        )

    def stats(self, elapsed: float) -> SolveStats:
        return SolveStats(
            algorithm="appr",
            iterations=self.pushes,
            touched=tuple(sorted(self.touched)),
            wall_time=elapsed,
            refreshes=self.refreshes,
        )

    def run(self) -> SparseVector:
        for i in sorted(self.grad):
            self._enqueue(i)
        while True:
            while self.queue:
                i = self._next()
                if not self.violates(i):
                    continue
                self.push(i)
                if self.refresh_interval and self.pushes % self.refresh_interval == 0:
                    self.refresh()
                    logger.debug(f"APPR refresh after {self.pushes} pushes")
            # the criterion is only accepted on recomputed gradients
            self.refresh()
            if not self.queue:
                break
        return SparseVector(self.x)


def appr_solve(
    prob: PageRankProblem,
    order: Order = "fifo",
    max_touch: Optional[int] = None,
    refresh_interval: int = settings.APPR_REFRESH_INTERVAL,
) -> tuple[SparseVector, SolveStats]:
    """Pushes until every node has grad_i > -rho alpha d_i."""
    if prob.rho <= 0:
        raise InvalidParametersError("APPR needs rho > 0")
    start = time.perf_counter()
    state = ApprState(prob, order, refresh_interval, max_touch)
    solution = state.run()
    stats = state.stats(time.perf_counter() - start)
    report = appr_residual_report(prob, solution)
    stats.max_kkt_violation = report.max_scaled_gradient / report.threshold
    logger.info(
        f"APPR solve rho={prob.rho:g} alpha={prob.alpha:g}: {stats.iterations} pushes, "
        f"support {len(solution)}, touched {stats.touched_count}, {stats.wall_time:.3f}s"
    )
    return solution, stats


def appr_residual_report(prob: PageRankProblem, x: Mapping[int, float]) -> ApprResidualReport:
    """max_i |grad_i| / d_i over supp(x), its neighbors and the seeds, against rho * alpha."""
    g = prob.graph
    nodes = set(prob.seed)
    for i in x:
        nodes.add(i)
        nodes.update(g.neighbors(i)[0])

    worst = 0.0
    flagged = []
    for i in sorted(nodes):
        d_i = g.degree(i)
        grad_i = gradient(prob, x, i)
        worst = max(worst, abs(grad_i) / d_i)
        if grad_i <= -prob.threshold(i):
            flagged.append(i)
    return ApprResidualReport(
        max_scaled_gradient=worst,
        threshold=prob.rho * prob.alpha,
        flagged=flagged,
        checked=len(nodes),
        passed=not flagged,
    )
