import logging

from commands.common import (
    EXIT_OK,
    RunConfig,
    UsageError,
    add_graph_flags,
    add_io_flags,
    load_graph,
    meta_for,
    open_output,
)
from services.analysis import sweep_cut
from services.formats import SWEEP_COLUMNS, load_solution, write_csv, write_json

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("sweep", help="round a solution by sweep cut")
    add_io_flags(parser)
    add_graph_flags(parser)
    parser.add_argument("--solution", help="solution JSON written by solve")
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> int:
    g = load_graph(config)
    if config.solution is None:
        raise UsageError("--solution is required")
    with open(config.solution) as handle:
        x = load_solution(handle)
    result = sweep_cut(g, x)
    logger.info(f"Sweep cut: best prefix of {result.best_size} nodes, conductance {result.best_conductance:.4f}")

    with open_output(config.out) as stream:
        if config.format == "csv":
            rows = [
                (rank, node, repr(value), repr(phi))
                for rank, (node, value, phi) in enumerate(
                    zip(result.order, result.values, result.prefix_conductance), start=1
                )
            ]
            write_csv(stream, meta_for(config), SWEEP_COLUMNS, rows)
        else:
            payload = {"sweep": result.model_dump(), "best_set": list(result.best_set)}
            write_json(stream, payload, meta_for(config))
    return EXIT_OK
