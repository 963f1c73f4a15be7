import logging

from commands.common import (
    EXIT_OK,
    RunConfig,
    UsageError,
    add_graph_flags,
    add_io_flags,
    load_graph,
    load_target_file,
    meta_for,
    open_output,
)
from services.analysis import evaluate, sweep_cut
from services.formats import load_solution, write_csv, write_json

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("selection", "size", "precision", "recall", "f1", "fp_volume", "conductance")


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="score a solution against a target cluster")
    add_io_flags(parser)
    add_graph_flags(parser)
    parser.add_argument("--target", help="target cluster file")
    parser.add_argument("--solution", help="solution JSON written by solve")
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> int:
    """Scores both the raw support and its sweep-cut rounding."""
    g = load_graph(config)
    target = load_target_file(config, g)
    if config.solution is None:
        raise UsageError("--solution is required")
    with open(config.solution) as handle:
        x = load_solution(handle)

    selections = {"support": x.support()}
    if len(x):
        selections["sweep"] = sweep_cut(g, x).best_set
    scores = {name: evaluate(g, nodes, target) for name, nodes in selections.items()}
    for name, score in scores.items():
        logger.info(f"{name}: precision {score.precision:.3f}, recall {score.recall:.3f}, F1 {score.f1:.3f}")

    with open_output(config.out) as stream:
        if config.format == "csv":
            rows = [
                (name, len(selections[name]), s.precision, s.recall, s.f1, s.fp_volume, s.conductance)
                for name, s in scores.items()
            ]
            write_csv(stream, meta_for(config), EVAL_COLUMNS, rows)
        else:
            payload = {name: {"size": len(selections[name]), **s.model_dump()} for name, s in scores.items()}
            write_json(stream, {"evaluation": payload}, meta_for(config))
    return EXIT_OK
