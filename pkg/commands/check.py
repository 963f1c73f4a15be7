import logging

from commands.common import (
    EXIT_INVARIANT_FAILURE,
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
from services.analysis import L1Solver, check_sandwich
from services.appr_solver import appr_residual_report, appr_solve
from services.formats import write_csv, write_json
from services.invariants import run_invariant_suite
from services.l1pr_solver import PageRankProblem, check_kkt, solve, support_volume_bound

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ("name", "passed", "instances", "failures", "worst")


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("check", help="verify solver invariants on one instance or a random corpus")
    add_io_flags(parser)
    add_problem_flags(parser)
    parser.add_argument("--corpus-size", type=int, help="instances in the random corpus")
    parser.add_argument("--order", choices=["fifo", "lifo"], help="APPR push order for the sandwich")
    parser.set_defaults(handler=run)


def _check_instance(config: RunConfig, solver: L1Solver) -> dict:
    g = load_graph(config)
    seed = require_seed(config, g)
    if config.rho is None or config.rho <= 0:
        raise UsageError("checking one instance needs --rho > 0")
    prob = PageRankProblem.single_seed(g, seed, config.alpha, config.rho)
    x, _ = solver(prob, config.tol)
    kkt = check_kkt(prob, x, config.tol)
    vol, bound = support_volume_bound(prob, x)
    pushed, _ = appr_solve(prob, config.order)
    residual = appr_residual_report(prob, pushed)
    sandwich = check_sandwich(g, seed, config.alpha, config.rho, config.tol, config.order, l1_solver=solver)

    checks = [
        {"name": "nonnegative", "passed": x.min_value() >= 0, "worst": max(-x.min_value(), 0.0)},
        {"name": "kkt", "passed": kkt.passed, "worst": kkt.max_violation},
        {"name": "volume_bound", "passed": vol <= bound * (1.0 + config.tol), "worst": vol / bound if bound > 0 else 0.0},
        {"name": "appr_termination", "passed": residual.passed, "worst": float(len(residual.flagged))},
        {
            "name": "sandwich",
            "passed": sandwich.passed,
            "worst": float(len(sandwich.lower_not_in_appr) + len(sandwich.appr_not_in_upper)),
        },
    ]
    for check in checks:
        check.update(instances=1, failures=0 if check["passed"] else 1)
    return {
        "passed": all(check["passed"] for check in checks),
        "checks": checks,
        "volume_bounds": [{"rho": prob.rho, "support_volume": vol, "bound": bound}],
        "kkt": kkt.model_dump(),
        "sandwich": sandwich.model_dump(),
    }


def run(config: RunConfig, solver: L1Solver = solve) -> int:
    """Exit code 1 when any invariant fails; ``solver`` is the l1 solver under test."""
    if config.graph is not None:
        report = _check_instance(config, solver)
    else:
        report = run_invariant_suite(config.corpus_size, config.rng_seed, solver, config.tol).model_dump()

    with open_output(config.out) as stream:
        if config.format == "csv":
            rows = [[check[column] for column in CHECK_COLUMNS] for check in report["checks"]]
            write_csv(stream, meta_for(config), CHECK_COLUMNS, rows)
        else:
            write_json(stream, {"report": report}, meta_for(config))

    if not report["passed"]:
        failed = [check["name"] for check in report["checks"] if not check["passed"]]
        logger.error(f"Invariant failures: {', '.join(failed)}")
        return EXIT_INVARIANT_FAILURE
    return EXIT_OK
