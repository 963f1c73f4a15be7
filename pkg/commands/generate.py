import logging

from commands.common import (
    EXIT_OK,
    RunConfig,
    UsageError,
    add_io_flags,
    add_model_flags,
    meta_for,
    model_params,
)
from services.formats import save_target, write_json, write_meta_lines
from services.graph_core import save_edge_list
from services.random_model import generate, theory

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("generate", help="draw a graph from the local random model")
    add_io_flags(parser)
    add_model_flags(parser)
    parser.add_argument("--alpha", type=float, help="alpha used for the theory echo")
    parser.add_argument("--delta", type=float, help="delta used for the theory echo")
    parser.set_defaults(handler=run)


def run(config: RunConfig) -> int:
    """Writes PREFIX.edges, PREFIX.target and PREFIX.json for one model draw."""
    if config.out is None:
        raise UsageError("generate needs --out PREFIX")
    params = model_params(config)
    g, target = generate(params, config.rng_seed)

    meta = meta_for(config)
    with open(f"{config.out}.edges", "w") as handle:
        write_meta_lines(handle, meta)
        save_edge_list(g, handle)
    with open(f"{config.out}.target", "w") as handle:
        save_target(handle, target, meta)

    payload = {
        "params": params.model_dump(),
        "graph": {"n": g.n, "edges": g.num_edges, "volume": g.total_volume, "components": g.n_components},
        "target": list(target),
    }
    if params.d_bar > 0:
        payload["theory"] = theory(params, config.alpha, config.delta).model_dump()
    with open(f"{config.out}.json", "w") as handle:
        write_json(handle, payload, meta)

    logger.info(f"Generated {g} with a target of {len(target)} nodes into {config.out}.*")
    return EXIT_OK
