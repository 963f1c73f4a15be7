import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel

from services import settings
from services.analysis import L1Solver, check_sandwich, local_region
from services.appr_solver import appr_residual_report, appr_solve
from services.graph_core import Graph, NodeSet
from services.l1pr_solver import PageRankProblem, check_kkt, solve, support_volume_bound
from services.random_model import ErdosRenyiBackground, LocalModelParams, generate

logger = logging.getLogger(__name__)

ALPHAS = (0.15, 0.5, 0.85)
RHO_FRACTIONS = (0.9, 0.5, 0.2, 0.05, 0.01)
MONOTONE_TOL = 1e-10


class InvariantCheck(BaseModel):
    name: str
    passed: bool = True
    instances: int = 0
    failures: int = 0
    worst: float = 0.0
    detail: Optional[str] = None

    def record(self, ok: bool, magnitude: float = 0.0, detail: Optional[str] = None) -> None:
        self.instances += 1
        self.worst = max(self.worst, magnitude)
        if not ok:
            self.failures += 1
            self.passed = False
            if self.detail is None:
                self.detail = detail


class InvariantReport(BaseModel):
    corpus_size: int
    rng_seed: Optional[int]
    passed: bool
    checks: list[InvariantCheck]
    volume_bounds: list[dict]


def _draw_instance(rng: np.random.Generator) -> tuple[Graph, NodeSet, int, float]:
    n = int(rng.integers(20, 61))
    k = int(rng.integers(5, 11))
    params = LocalModelParams(
        n=n,
        k=k,
        p=float(rng.uniform(0.3, 0.8)),
        q=float(rng.uniform(0.005, 0.05)),
        background=ErdosRenyiBackground(q_bg=float(rng.uniform(0.05, 0.2))),
    )
    g, target = generate(params, int(rng.integers(2**31)))
    candidates = [i for i in target if g.degree(i) > 0]
    seed = int(rng.choice(candidates))
    alpha = float(rng.choice(ALPHAS))
    return g, target, seed, alpha


def run_invariant_suite(
    corpus_size: int = 50,
    rng_seed: Optional[int] = 0,
    solver: L1Solver = solve,
    tol: float = settings.DEFAULT_TOL,
) -> InvariantReport:
    """Runs the standing property checks over a random local-model corpus.

    ``solver`` is the l1 solver under test, so a faulty implementation can be
    swapped in.
    """
    checks = {
        name: InvariantCheck(name=name)
        for name in ("nonnegative", "kkt", "monotone_path", "volume_bound", "locality", "appr_termination", "sandwich")
    }
    volume_bounds = []
    rng = np.random.default_rng(rng_seed)

    for instance in range(corpus_size):
        g, target, seed, alpha = _draw_instance(rng)
        base = PageRankProblem.single_seed(g, seed, alpha, 1.0)
        rho_max = 1.0 / g.degree(seed)
        previous = None
        for fraction in RHO_FRACTIONS:
            prob = base.with_rho(fraction * rho_max)
            x, stats = solver(prob, tol)

            lowest = x.min_value()
            checks["nonnegative"].record(lowest >= 0, max(-lowest, 0.0), f"instance {instance}: negative entry")

            kkt = check_kkt(prob, x, tol)
            checks["kkt"].record(kkt.passed, kkt.max_violation, f"instance {instance}: worst node {kkt.worst_node}")

            if previous is not None:
                gap = max((previous.value(i) - x.value(i) for i in previous), default=0.0)
                checks["monotone_path"].record(
                    gap <= MONOTONE_TOL, max(gap, 0.0), f"instance {instance}: value dropped by {gap:.3e}"
                )
            previous = x

            vol, bound = support_volume_bound(prob, x)
            ok = vol <= bound * (1.0 + tol)
            checks["volume_bound"].record(ok, vol / bound if bound > 0 else 0.0, f"instance {instance}: {vol} > {bound}")
            volume_bounds.append({"instance": instance, "rho": prob.rho, "support_volume": vol, "bound": bound})

            allowed = local_region(g, set(x) | {seed})
            outside = set(stats.touched) - allowed
            checks["locality"].record(not outside, float(len(outside)), f"instance {instance}: touched {sorted(outside)[:5]}")

            pushed, _ = appr_solve(prob)
            residual = appr_residual_report(prob, pushed)
            checks["appr_termination"].record(
                residual.passed, residual.max_scaled_gradient / residual.threshold,
                f"instance {instance}: flagged {residual.flagged[:5]}",
            )

        sandwich = check_sandwich(g, seed, alpha, RHO_FRACTIONS[2] * rho_max, tol, l1_solver=solver)
        checks["sandwich"].record(
            sandwich.passed,
            float(len(sandwich.lower_not_in_appr) + len(sandwich.appr_not_in_upper)),
            f"instance {instance}: sandwich broken",
        )

    report = InvariantReport(
        corpus_size=corpus_size,
        rng_seed=rng_seed,
        passed=all(check.passed for check in checks.values()),
        checks=list(checks.values()),
        volume_bounds=volume_bounds,
    )
    for check in report.checks:
        level = logging.INFO if check.passed else logging.ERROR
        logger.log(level, f"{check.name}: {check.failures}/{check.instances} failures, worst {check.worst:.3e}")
    return report
