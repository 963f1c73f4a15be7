import asyncio
import logging
from typing import Callable, Iterable, Literal, Optional, Sequence, TypeVar, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import binomtest

from services import settings
from services.appr_solver import appr_solve
from services.errors import EmptyVectorError, InvalidParametersError
from services.graph_core import Graph, NodeSet, as_node_set, conductance, volume
from services.l1pr_solver import PageRankProblem, SolveStats, solve
from services.random_model import (
    LocalModelParams,
    find_good_seed,
    generate,
    q_for_gamma,
    theory,
)
from services.sparse_vector import SparseVector
from services.stagewise import SolutionPath, stagewise_path

logger = logging.getLogger(__name__)

Solver = Literal["l1pr", "appr"]
StopPredicate = Callable[[NodeSet], bool]
L1Solver = Callable[[PageRankProblem, float], tuple[SparseVector, SolveStats]]
T = TypeVar("T")


class ClusterEval(BaseModel):
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    tp_volume: float = 0.0
    fp_volume: float = 0.0
    recovered_volume: float = 0.0
    target_volume: float = 0.0
    conductance: Optional[float] = None
    empty: bool = False


class SweepResult(BaseModel):
    order: list[int]
    values: list[float]
    prefix_conductance: list[float]
    best_size: int
    best_conductance: float

    @property
    def best_set(self) -> NodeSet:
        return tuple(sorted(self.order[: self.best_size]))


def run_solver(
    prob: PageRankProblem,
    solver: Solver = "l1pr",
    tol: float = settings.DEFAULT_TOL,
    max_touch: Optional[int] = None,
) -> tuple[SparseVector, SolveStats]:
    if solver == "l1pr":
        return solve(prob, tol, max_touch)
    if solver == "appr":
        return appr_solve(prob, max_touch=max_touch)
    raise InvalidParametersError(f"unknown solver {solver!r}")


def sweep_cut(g: Graph, x: SparseVector) -> SweepResult:
    """Scans prefixes of supp(x) sorted by value (descending, lower id first on ties)."""
    if not len(x):
        raise EmptyVectorError("sweep cut needs a nonzero vector")
    order = sorted(x, key=lambda i: (-x[i], i))
    members: set[int] = set()
    inside = crossing = 0.0
    profile = []
    for v in order:
        neighbors, weights = g.neighbors(v)
        to_prefix = sum(w for j, w in zip(neighbors, weights) if j in members)
        d_v = g.degree(v)
        inside += d_v
        crossing = max(crossing + d_v - 2.0 * to_prefix, 0.0)
        members.add(v)
        denominator = min(inside, g.total_volume - inside)
        if len(members) == g.n or denominator <= 0:
            profile.append(float("inf"))
        else:
            profile.append(crossing / denominator)

    best = int(np.argmin(profile))
    return SweepResult(
        order=order,
        values=[x[i] for i in order],
        prefix_conductance=profile,
        best_size=best + 1,
        best_conductance=profile[best],
    )


def evaluate(g: Graph, recovered: Iterable[int], target: Iterable[int]) -> ClusterEval:
    """Volume-weighted precision, recall and F1 of ``recovered`` against ``target``."""
    target_set = set(as_node_set(g, target))
    if not target_set:
        raise InvalidParametersError("target cluster must be nonempty")
    recovered_set = set(as_node_set(g, recovered))
    target_volume = volume(g, target_set)
    if not recovered_set:
        return ClusterEval(target_volume=target_volume, empty=True)

    recovered_volume = volume(g, recovered_set)
    tp_volume = volume(g, recovered_set & target_set)
    precision = tp_volume / recovered_volume if recovered_volume > 0 else 0.0
    recall = tp_volume / target_volume if target_volume > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClusterEval(
        precision=precision,
        recall=recall,
        f1=f1,
        tp_volume=tp_volume,
        fp_volume=volume(g, recovered_set - target_set),
        recovered_volume=recovered_volume,
        target_volume=target_volume,
        conductance=conductance(g, recovered_set) if len(recovered_set) < g.n else None,
    )


def bfs_expand(
    g: Graph,
    seeds: Iterable[int],
    steps: int,
    stop: Optional[StopPredicate] = None,
) -> NodeSet:
    """Batch BFS: each step absorbs the whole frontier layer; ``stop`` is checked before every layer."""
    visited = set(as_node_set(g, seeds))
    if not visited:
        raise InvalidParametersError("bfs_expand needs at least one seed")
    frontier = sorted(visited)
    for _ in range(steps):
        if stop is not None and stop(tuple(sorted(visited))):
            break
        layer = []
        for u in frontier:
            for v in g.neighbors(u)[0]:
                if v not in visited:
                    visited.add(v)
                    layer.append(v)
        if not layer:
            break
        frontier = layer
    return tuple(sorted(visited))


def target_overlap_stop(g: Graph, target: Iterable[int], fraction: float = 0.75) -> StopPredicate:
    target_set = set(target)
    target_volume = volume(g, target_set)

    def predicate(nodes: NodeSet) -> bool:
        return volume(g, target_set.intersection(nodes)) >= fraction * target_volume

    return predicate


def volume_fraction_stop(g: Graph, fraction: float = 0.25) -> StopPredicate:
    def predicate(nodes: NodeSet) -> bool:
        return volume(g, nodes) >= fraction * g.total_volume

    return predicate


def any_stop(*predicates: StopPredicate) -> StopPredicate:
    return lambda nodes: any(predicate(nodes) for predicate in predicates)


class SandwichReport(BaseModel):
    seed: int
    alpha: float
    rho: float
    passed: bool
    lower_support_size: int
    appr_support_size: int
    upper_support_size: int
    lower_not_in_appr: list[int] = Field(default_factory=list)
    appr_not_in_upper: list[int] = Field(default_factory=list)


def check_sandwich(
    g: Graph,
    seed: int,
    alpha: float,
    rho: float,
    tol: float = settings.DEFAULT_TOL,
    order: str = "fifo",
    l1_solver: L1Solver = solve,
) -> SandwichReport:
    """supp(x(rho)) <= supp(APPR(rho)) <= supp(x((1 - alpha) rho / 2))."""
    if rho <= 0:
        raise InvalidParametersError("the support sandwich needs rho > 0")
    prob = PageRankProblem.single_seed(g, seed, alpha, rho)
    lower, _ = l1_solver(prob, tol)
    pushed, _ = appr_solve(prob, order=order)
    upper, _ = l1_solver(prob.with_rho(0.5 * (1 - alpha) * rho), tol)

    lower_missing = sorted(set(lower) - set(pushed))
    upper_missing = sorted(set(pushed) - set(upper))
    report = SandwichReport(
        seed=seed,
        alpha=alpha,
        rho=rho,
        passed=not lower_missing and not upper_missing,
        lower_support_size=len(lower),
        appr_support_size=len(pushed),
        upper_support_size=len(upper),
        lower_not_in_appr=lower_missing,
        appr_not_in_upper=upper_missing,
    )
    if not report.passed:
        logger.error(f"Support sandwich failed at seed {seed}, rho={rho:g}: {report.model_dump()}")
    return report


class PathProfileRow(BaseModel):
    step: int
    implied_rho: float
    l1_norm: float
    support_size: int
    precision: float
    recall: float
    f1: float
    conductance: Optional[float] = None


def path_profile(g: Graph, path: SolutionPath, target: Iterable[int]) -> list[PathProfileRow]:
    """Evaluates the support of every stored path point against the target."""
    target = as_node_set(g, target)
    rows = []
    for point in path.points:
        metrics = evaluate(g, point.iterate.support(), target)
        rows.append(
            PathProfileRow(
                step=point.step,
                implied_rho=point.implied_rho,
                l1_norm=point.l1_norm,
                support_size=len(point.iterate),
                precision=metrics.precision,
                recall=metrics.recall,
                f1=metrics.f1,
                conductance=metrics.conductance,
            )
        )
    return rows


def select_best_f1(profile: Sequence[PathProfileRow]) -> Optional[PathProfileRow]:
    candidates = [row for row in profile if row.support_size > 0]
    return max(candidates, key=lambda row: row.f1, default=None)


def select_min_conductance(profile: Sequence[PathProfileRow]) -> Optional[PathProfileRow]:
    candidates = [row for row in profile if row.conductance is not None]
    return min(candidates, key=lambda row: row.conductance, default=None)


class ClusterAverage(BaseModel):
    seeds_run: int
    empty_solutions: int
    precision: float
    recall: float
    f1: float
    conductance: Optional[float] = None


def cluster_average(
    g: Graph,
    target: Iterable[int],
    alpha: float,
    rho: float,
    solver: Solver = "l1pr",
    tol: float = settings.DEFAULT_TOL,
) -> ClusterAverage:
    """Runs the solver from every node of the target, rounds each output by sweep cut and averages."""
    target = as_node_set(g, target)
    evals = []
    empty = 0
    for node in target:
        if g.degree(node) <= 0:
            continue
        x, _ = run_solver(PageRankProblem.single_seed(g, node, alpha, rho), solver, tol)
        if not len(x):
            empty += 1
            evals.append(ClusterEval(empty=True))
            continue
        evals.append(evaluate(g, sweep_cut(g, x).best_set, target))

    if not evals:
        raise InvalidParametersError("no target node has positive degree")
    conductances = [e.conductance for e in evals if e.conductance is not None]
    return ClusterAverage(
        seeds_run=len(evals),
        empty_solutions=empty,
        precision=float(np.mean([e.precision for e in evals])),
        recall=float(np.mean([e.recall for e in evals])),
        f1=float(np.mean([e.f1 for e in evals])),
        conductance=float(np.mean(conductances)) if conductances else None,
    )


def filter_clusters_by_conductance(
    g: Graph,
    clusters: dict[str, Iterable[int]],
    max_conductance: float = 0.6,
) -> dict[str, NodeSet]:
    """Keeps the ground-truth clusters whose conductance does not exceed ``max_conductance``."""
    kept = {}
    for name, nodes in clusters.items():
        members = as_node_set(g, nodes)
        if 0 < len(members) < g.n and conductance(g, members) <= max_conductance:
            kept[name] = members
    logger.info(f"Kept {len(kept)} of {len(clusters)} clusters with conductance <= {max_conductance}")
    return kept


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    interval = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(interval.low), float(interval.high)


async def _gather_trials(
    run_trial: Callable[[int, np.random.SeedSequence], T],
    trials: int,
    rng_seed: Optional[Union[int, Sequence[int]]],
    max_workers: int,
) -> list[T]:
    children = np.random.SeedSequence(rng_seed).spawn(trials)
    semaphore = asyncio.Semaphore(max_workers)

    async def bounded(index: int, child: np.random.SeedSequence) -> T:
        async with semaphore:
            return await asyncio.to_thread(run_trial, index, child)

    return list(await asyncio.gather(*(bounded(i, child) for i, child in enumerate(children))))


def run_trials(
    run_trial: Callable[[int, np.random.SeedSequence], T],
    trials: int,
    rng_seed: Optional[Union[int, Sequence[int]]],
    max_workers: int = settings.MAX_WORKERS,
) -> list[T]:
    """Runs independent trials in worker threads; trial i always gets the i-th spawned seed."""
    if trials < 1:
        raise InvalidParametersError(f"trials must be at least 1, got {trials}")
    return asyncio.run(_gather_trials(run_trial, trials, rng_seed, max_workers))


def _pick_seed(g: Graph, target: NodeSet, good_seed: bool, rng: np.random.Generator) -> tuple[int, bool]:
    if good_seed:
        node = find_good_seed(g, target)
        if node is not None:
            return node, True
    candidates = [i for i in target if g.degree(i) > 0]
    return int(rng.choice(candidates)), False


class TrialRecord(BaseModel):
    trial: int
    seed_node: int
    good_seed: bool
    rho: float
    support_size: int
    support_volume: float
    full_recovery: bool
    exact_recovery: bool
    fp_volume: float
    fp_bound: float
    within_bound: bool
    degree_condition: bool
    min_exterior_neighbor_degree: Optional[float] = None
    f1: float
    touched_count: int
    local: bool


class RecoverySummary(BaseModel):
    params: LocalModelParams
    alpha: float
    delta: float
    solver: str
    rho: float
    fp_bound: float
    degree_threshold: float
    trials: list[TrialRecord]
    full_recovery_rate: float
    full_recovery_ci: tuple[float, float]
    qualifying_trials: int
    exact_recovery_rate: float
    exact_recovery_ci: tuple[float, float]
    within_bound_rate: float
    locality_rate: float
    mean_fp_volume: float
    mean_f1: float


def local_region(g: Graph, nodes: Iterable[int]) -> set[int]:
    """``nodes`` together with all their neighbors."""
    region = set(nodes)
    for i in list(region):
        region.update(g.neighbors(i)[0])
    return region


def _exterior_neighbor_degrees(g: Graph, target: NodeSet) -> list[float]:
    members = set(target)
    exterior = {j for i in target for j in g.neighbors(i)[0] if j not in members}
    return [g.degree(j) for j in sorted(exterior)]


def recovery_experiment(
    params: LocalModelParams,
    alpha: float,
    delta: float,
    trials: int,
    rng_seed: Optional[int] = None,
    solver: Solver = "l1pr",
    good_seed: bool = True,
    degree_multiplier: float = settings.DEGREE_MULTIPLIER,
    tol: float = settings.DEFAULT_TOL,
    max_workers: int = settings.MAX_WORKERS,
) -> RecoverySummary:
    """Monte-Carlo recovery run at rho = rho(delta).

    Each trial draws a fresh instance, seeds at a good node when one exists
    (else a uniform node of K) and records full recovery, exact recovery, the
    false-positive volume against its bound and the exterior degree condition.
    """
    model = theory(params, alpha, delta)
    rho = model.rho_delta
    threshold = model.degree_threshold(degree_multiplier)

    def run_trial(index: int, child: np.random.SeedSequence) -> TrialRecord:
        graph_seq, pick_seq = child.spawn(2)
        g, target = generate(params, graph_seq)
        seed, is_good = _pick_seed(g, target, good_seed, np.random.default_rng(pick_seq))
        x, stats = run_solver(PageRankProblem.single_seed(g, seed, alpha, rho), solver, tol)
        support = set(x)
        target_set = set(target)
        vol_k = volume(g, target)
        fp_bound = model.fp_volume_bound(vol_k) if solver == "l1pr" else model.appr_fp_volume_bound(vol_k)
        fp_volume = volume(g, support - target_set)
        exterior_degrees = _exterior_neighbor_degrees(g, target)
        return TrialRecord(
            trial=index,
            seed_node=seed,
            good_seed=is_good,
            rho=rho,
            support_size=len(support),
            support_volume=volume(g, support),
            full_recovery=target_set <= support,
            exact_recovery=target_set == support,
            fp_volume=fp_volume,
            fp_bound=fp_bound,
            within_bound=fp_volume <= fp_bound,
            degree_condition=all(d > threshold for d in exterior_degrees),
            min_exterior_neighbor_degree=min(exterior_degrees, default=None),
            f1=evaluate(g, support, target).f1,
            touched_count=stats.touched_count,
            local=set(stats.touched) <= local_region(g, support | {seed}),
        )

    records = run_trials(run_trial, trials, rng_seed, max_workers)

    full = [r for r in records if r.full_recovery]
    qualifying = [r for r in records if r.good_seed and r.degree_condition]
    exact = sum(r.exact_recovery for r in qualifying)
    summary = RecoverySummary(
        params=params,
        alpha=alpha,
        delta=delta,
        solver=solver,
        rho=rho,
        fp_bound=model.fp_volume_bound(params.k * model.d_bar),
        degree_threshold=threshold,
        trials=records,
        full_recovery_rate=len(full) / trials,
        full_recovery_ci=wilson_interval(len(full), trials),
        qualifying_trials=len(qualifying),
        exact_recovery_rate=exact / len(qualifying) if qualifying else 0.0,
        exact_recovery_ci=wilson_interval(exact, len(qualifying)),
        within_bound_rate=sum(r.within_bound for r in full) / len(full) if full else 0.0,
        locality_rate=sum(r.local for r in records) / trials,
        mean_fp_volume=float(np.mean([r.fp_volume for r in records])),
        mean_f1=float(np.mean([r.f1 for r in records])),
    )
    logger.info(
        f"Recovery with {solver} over {trials} trials: full {summary.full_recovery_rate:.2f}, "
        f"exact {summary.exact_recovery_rate:.2f} of {len(qualifying)} qualifying"
    )
    return summary


class GammaTrial(BaseModel):
    best_f1: float
    min_conductance_f1: float
    full_recovery: bool
    within_bound: bool


class GammaRow(BaseModel):
    gamma: float
    q: float
    trials: int
    best_f1: float
    min_conductance_f1: float
    full_recovery_rate: float
    full_recovery_ci: tuple[float, float]
    within_bound_rate: float


def gamma_experiment(
    gammas: Sequence[float],
    trials: int,
    rng_seed: Optional[int] = None,
    alpha: float = 0.1,
    delta: float = 0.1,
    clusters: int = 10,
    cluster_size: int = 20,
    p: float = 0.5,
    eta: float = 1e-3,
    tol: float = settings.DEFAULT_TOL,
    max_workers: int = settings.MAX_WORKERS,
) -> list[GammaRow]:
    """F1 against gamma on a planted SBM, with path selection by best F1 and by minimum conductance."""
    if trials < 1:
        raise InvalidParametersError(f"trials must be at least 1, got {trials}")
    n = clusters * cluster_size
    rows = []
    for index, gamma in enumerate(gammas):
        q = q_for_gamma(gamma, n, cluster_size, p)
        params = LocalModelParams.sbm_setup(clusters, cluster_size, p, q)
        model = theory(params, alpha, delta)

        def run_trial(_: int, child: np.random.SeedSequence) -> GammaTrial:
            graph_seq, pick_seq = child.spawn(2)
            g, target = generate(params, graph_seq)
            seed, _ = _pick_seed(g, target, True, np.random.default_rng(pick_seq))
            prob = PageRankProblem.single_seed(g, seed, alpha, model.rho_delta)
            path = stagewise_path(prob, eta=eta, max_iters=int(10 / eta))
            profile = path_profile(g, path, target)
            best = select_best_f1(profile)
            by_conductance = select_min_conductance(profile)
            x, _ = solve(prob, tol)
            fp_volume = volume(g, set(x) - set(target))
            return GammaTrial(
                best_f1=best.f1 if best else 0.0,
                min_conductance_f1=by_conductance.f1 if by_conductance else 0.0,
                full_recovery=set(target) <= set(x),
                within_bound=fp_volume <= model.fp_volume_bound(volume(g, target)),
            )

        seed_for_gamma = None if rng_seed is None else [rng_seed, index]
        results = run_trials(run_trial, trials, seed_for_gamma, max_workers)
        full = sum(r.full_recovery for r in results)
        rows.append(
            GammaRow(
                gamma=gamma,
                q=q,
                trials=trials,
                best_f1=float(np.mean([r.best_f1 for r in results])),
                min_conductance_f1=float(np.mean([r.min_conductance_f1 for r in results])),
                full_recovery_rate=full / trials,
                full_recovery_ci=wilson_interval(full, trials),
                within_bound_rate=(
                    sum(r.within_bound for r in results if r.full_recovery) / full if full else 0.0
                ),
            )
        )
        logger.info(f"gamma={gamma:g}: best F1 {rows[-1].best_f1:.3f}, min-conductance F1 {rows[-1].min_conductance_f1:.3f}")
    return rows
