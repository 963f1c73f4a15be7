import logging

from commands.common import (
    EXIT_OK,
    RunConfig,
    UsageError,
    add_io_flags,
    add_problem_flags,
    load_graph,
    meta_for,
    open_output,
    require_seed,
)
from services.appr_solver import appr_residual_report, appr_solve
from services.formats import PATH_COLUMNS, path_rows, solution_payload, write_csv, write_json
from services.graph_core import Graph
from services.l1pr_solver import (
    PageRankProblem,
    check_kkt,
    solve,
    solve_path,
    solve_unregularized,
    support_volume_bound,
)
from services.stagewise import stagewise_path

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("solve", help="solve from one seed node with l1pr, appr or stagewise")
    add_io_flags(parser)
    add_problem_flags(parser)
    parser.add_argument("--algo", choices=["l1pr", "appr", "stagewise"])
    parser.add_argument("--order", choices=["fifo", "lifo"], help="APPR push order")
    parser.add_argument("--rho-grid", help="comma separated rho values (l1pr only)")
    parser.add_argument("--eta", type=float, help="stagewise step")
    parser.add_argument("--min-rho", type=float, help="stagewise stop")
    parser.add_argument("--max-iters", type=int, help="stagewise stop")
    parser.add_argument("--max-l1", type=float, help="stagewise stop")
    parser.add_argument("--stride", type=int, help="stagewise storage stride")
    parser.set_defaults(handler=run)


def _write_solution(config: RunConfig, payload: dict) -> None:
    with open_output(config.out) as stream:
        if config.format == "csv":
            rows = [(node, repr(value)) for node, value in payload["solution"].items()]
            write_csv(stream, meta_for(config), ("node", "value"), rows)
        else:
            write_json(stream, payload, meta_for(config))


def _run_l1pr(config: RunConfig, prob: PageRankProblem) -> int:
    if prob.rho == 0:
        x = solve_unregularized(prob, config.tol)
        payload = solution_payload(x, timing=config.timestamp, kkt=check_kkt(prob, x, config.tol).model_dump())
    else:
        x, stats = solve(prob, config.tol, config.max_touch)
        vol, bound = support_volume_bound(prob, x)
        payload = solution_payload(
            x,
            stats,
            config.timestamp,
            kkt=check_kkt(prob, x, config.tol).model_dump(),
            volume_bound={"support_volume": vol, "bound": bound},
        )
    _write_solution(config, payload)
    return EXIT_OK


def _run_grid(config: RunConfig, prob: PageRankProblem) -> int:
    results = solve_path(prob, config.rho_grid, config.tol, config.max_touch)
    with open_output(config.out) as stream:
        if config.format == "csv":
            rows = [(repr(rho), node, repr(value)) for rho, x, _ in results for node, value in x.items()]
            write_csv(stream, meta_for(config), ("rho", "node", "value"), rows)
        else:
            solutions = [{"rho": rho, **solution_payload(x, stats, config.timestamp)} for rho, x, stats in results]
            write_json(stream, {"solutions": solutions}, meta_for(config))
    return EXIT_OK


def _run_appr(config: RunConfig, prob: PageRankProblem) -> int:
    if prob.rho <= 0:
        raise UsageError("appr needs --rho > 0")
    x, stats = appr_solve(prob, config.order, config.max_touch)
    payload = solution_payload(x, stats, config.timestamp, residual=appr_residual_report(prob, x).model_dump())
    _write_solution(config, payload)
    return EXIT_OK


def _run_stagewise(config: RunConfig, g: Graph, seed: int) -> int:
    min_rho = config.min_rho
    if min_rho is None and config.max_iters is None and config.max_l1 is None:
        if config.rho is None or config.rho <= 0:
            raise UsageError("stagewise needs --min-rho, --max-iters, --max-l1 or a positive --rho")
        min_rho = config.rho
    prob = PageRankProblem.single_seed(g, seed, config.alpha, 0.0)
    path = stagewise_path(
        prob,
        eta=config.eta,
        min_rho=min_rho,
        max_iters=config.max_iters,
        max_l1=config.max_l1,
        stride=config.stride,
        max_touch=config.max_touch,
    )
    with open_output(config.out) as stream:
        if config.format == "csv":
            write_csv(stream, meta_for(config), PATH_COLUMNS, path_rows(path))
        else:
            points = [
                {
                    "step": point.step,
                    "l1_norm": point.l1_norm,
                    "implied_rho": point.implied_rho,
                    "solution": point.iterate.to_dict(),
                }
                for point in path.points
            ]
            summary = {"eta": path.eta, "steps": path.steps, "stride": path.stride, "stop_reason": path.stop_reason}
            write_json(stream, {"path": {**summary, "points": points}}, meta_for(config))
    return EXIT_OK


def run(config: RunConfig) -> int:
    g = load_graph(config)
    seed = require_seed(config, g)
    if config.algo == "stagewise":
        return _run_stagewise(config, g, seed)

    if config.rho_grid is not None:
        if config.algo != "l1pr":
            raise UsageError("--rho-grid is only supported with --algo l1pr")
        return _run_grid(config, PageRankProblem.single_seed(g, seed, config.alpha, config.rho_grid[0]))
    if config.rho is None:
        raise UsageError("--rho is required")

    prob = PageRankProblem.single_seed(g, seed, config.alpha, config.rho)
    if config.algo == "appr":
        return _run_appr(config, prob)
    return _run_l1pr(config, prob)
