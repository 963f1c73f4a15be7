import logging

from commands.common import (
    EXIT_OK,
    RunConfig,
    UsageError,
    add_io_flags,
    add_model_flags,
    meta_for,
    model_params,
    open_output,
)
from services.analysis import gamma_experiment, recovery_experiment
from services.formats import write_csv, write_json

logger = logging.getLogger(__name__)

GAMMA_COLUMNS = (
    "gamma",
    "q",
    "trials",
    "best_f1",
    "min_conductance_f1",
    "full_recovery_rate",
    "full_recovery_ci_low",
    "full_recovery_ci_high",
    "within_bound_rate",
)
TRIAL_COLUMNS = (
    "trial",
    "seed_node",
    "good_seed",
    "support_size",
    "full_recovery",
    "exact_recovery",
    "fp_volume",
    "fp_bound",
    "degree_condition",
    "f1",
    "local",
)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="Monte-Carlo recovery runs and F1-vs-gamma tables")
    add_io_flags(parser)
    add_model_flags(parser)
    parser.add_argument("--gamma-grid", help="comma separated gamma values; switches to the F1-vs-gamma table")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--eta", type=float, help="stagewise step for the gamma table")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--trials", type=int)
    parser.add_argument("--algo", choices=["l1pr", "appr"])
    parser.add_argument("--degree-multiplier", type=float)
    parser.add_argument("--no-good-seed", dest="good_seed", action="store_const", const=False)
    parser.set_defaults(handler=run)


def _run_gamma(config: RunConfig) -> int:
    rows = gamma_experiment(
        config.gamma_grid,
        config.trials,
        config.rng_seed,
        alpha=config.alpha,
        delta=config.delta,
        clusters=config.clusters or 10,
        cluster_size=config.cluster_size or 20,
        p=config.p,
        eta=config.eta or 1e-3,
        tol=config.tol,
    )
    with open_output(config.out) as stream:
        if config.format == "csv":
            table = [
                (
                    row.gamma,
                    row.q,
                    row.trials,
                    row.best_f1,
                    row.min_conductance_f1,
                    row.full_recovery_rate,
                    *row.full_recovery_ci,
                    row.within_bound_rate,
                )
                for row in rows
            ]
            write_csv(stream, meta_for(config), GAMMA_COLUMNS, table)
        else:
            write_json(stream, {"gamma_rows": [row.model_dump() for row in rows]}, meta_for(config))
    return EXIT_OK


def _run_recovery(config: RunConfig) -> int:
    if config.algo == "stagewise":
        raise UsageError("recovery experiments run with --algo l1pr or appr")
    summary = recovery_experiment(
        model_params(config),
        config.alpha,
        config.delta,
        config.trials,
        config.rng_seed,
        solver=config.algo,
        good_seed=config.good_seed,
        degree_multiplier=config.degree_multiplier,
        tol=config.tol,
    )
    with open_output(config.out) as stream:
        if config.format == "csv":
            table = [[getattr(record, column) for column in TRIAL_COLUMNS] for record in summary.trials]
            write_csv(stream, meta_for(config), TRIAL_COLUMNS, table)
        else:
            write_json(stream, {"recovery": summary.model_dump()}, meta_for(config))
    return EXIT_OK


def run(config: RunConfig) -> int:
    if config.gamma_grid is not None:
        return _run_gamma(config)
    return _run_recovery(config)
