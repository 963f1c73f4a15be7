import argparse
import logging
import os
import sys
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Literal, Optional, TextIO

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from services import settings
from services.errors import (
    DegenerateSetError,
    DenseGraphTooLargeError,
    EmptyVectorError,
    GraphFormatError,
    InvalidParametersError,
    LocalityBudgetExceeded,
    OutOfPathRangeError,
)
from services.formats import build_meta, load_target
from services.graph_core import Graph, NodeSet, load_edge_list, load_labeled_edge_list, write_label_map
from services.random_model import (
    ErdosRenyiBackground,
    LocalModelParams,
    NoBackground,
    SbmBackground,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (
    ValidationError,
    InvalidParametersError,
    GraphFormatError,
    DegenerateSetError,
    DenseGraphTooLargeError,
    EmptyVectorError,
    OutOfPathRangeError,
    FileNotFoundError,
)


class UsageError(InvalidParametersError):
    pass


class RunConfig(BaseModel):
    """Fully resolved settings of one CLI run; every range is checked before any work starts."""

    model_config = ConfigDict(extra="forbid")

    command: str
    graph: Optional[str] = None
    labeled: bool = False
    label_map: Optional[str] = None
    target: Optional[str] = None
    solution: Optional[str] = None
    seed_node: Optional[int] = Field(default=None, ge=0)
    out: Optional[str] = None
    format: Literal["json", "csv"] = "json"
    timestamp: bool = True

    algo: Literal["l1pr", "appr", "stagewise"] = "l1pr"
    order: Literal["fifo", "lifo"] = "fifo"
    alpha: float = Field(default=0.15, gt=0, lt=1)
    rho: Optional[float] = Field(default=None, ge=0)
    rho_grid: Optional[list[float]] = None
    delta: float = Field(default=0.1, gt=0, lt=1)
    eta: Optional[float] = Field(default=None, gt=0)
    min_rho: Optional[float] = Field(default=None, gt=0)
    max_iters: Optional[int] = Field(default=None, ge=1)
    max_l1: Optional[float] = Field(default=None, gt=0)
    stride: int = Field(default=settings.STAGEWISE_STRIDE, ge=1)
    tol: float = Field(default=settings.DEFAULT_TOL, gt=0)
    max_touch: Optional[int] = Field(default=None, ge=1)
    trials: int = Field(default=30, ge=1)
    rng_seed: int = 0
    corpus_size: int = Field(default=50, ge=1)
    good_seed: bool = True
    degree_multiplier: float = Field(default=settings.DEGREE_MULTIPLIER, gt=0)

    n: int = Field(default=1000, ge=1)
    k: int = Field(default=20, ge=1)
    p: float = Field(default=0.5, gt=0, le=1)
    q: float = Field(default=0.002, ge=0, le=1)
    background: Literal["none", "erdos_renyi", "sbm"] = "none"
    q_bg: float = Field(default=0.0, ge=0, le=1)
    clusters: Optional[int] = Field(default=None, ge=1)
    cluster_size: Optional[int] = Field(default=None, ge=1)
    p_in: Optional[float] = Field(default=None, ge=0, le=1)
    p_out: Optional[float] = Field(default=None, ge=0, le=1)
    permute: bool = False
    gamma_grid: Optional[list[float]] = None

    @field_validator("rho_grid", "gamma_grid", mode="before")
    @classmethod
    def split_grid(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [float(item) for item in value.replace(",", " ").split()]
        return value

    @field_validator("rho_grid")
    @classmethod
    def check_rho_grid(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is not None and (not value or any(rho <= 0 for rho in value)):
            raise ValueError("rho grid must be a nonempty list of positive values")
        return value

    @field_validator("gamma_grid")
    @classmethod
    def check_gamma_grid(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is not None and (not value or any(not 0 < gamma <= 1 for gamma in value)):
            raise ValueError("gamma grid values must lie in (0, 1]")
        return value

    def echo(self) -> dict[str, Any]:
        """Resolved config as recorded in output files."""
        return self.model_dump(exclude={"timestamp", "out"})


def _normalize_keys(values: dict[str, Any]) -> dict[str, Any]:
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items()}


def resolve_config(command: str, flags: dict[str, Any]) -> RunConfig:
    """defaults < config file < LOCALPR_* environment < command-line flags."""
    merged: dict[str, Any] = {}
    config_file = flags.pop("config", None)
    if config_file is not None:
        if not os.path.isfile(config_file):
            raise UsageError(f"config file {config_file} does not exist")
        merged.update(_normalize_keys(dict(dotenv_values(config_file))))

    fields = RunConfig.model_fields
    merged.update({key: value for key, value in settings.env_overrides().items() if key in fields and key != "command"})
    merged.update({key: value for key, value in flags.items() if value is not None})
    merged["command"] = command
    return RunConfig.model_validate(merged)


def model_params(config: RunConfig) -> LocalModelParams:
    if config.background == "sbm":
        if config.clusters is None or config.cluster_size is None:
            raise UsageError("--background sbm needs --clusters and --cluster-size")
        return LocalModelParams(
            n=config.clusters * config.cluster_size,
            k=config.cluster_size,
            p=config.p,
            q=config.q,
            background=SbmBackground(
                cluster_sizes=[config.cluster_size] * (config.clusters - 1),
                p_in=config.p if config.p_in is None else config.p_in,
                p_out=config.q if config.p_out is None else config.p_out,
            ),
            permute=config.permute,
        )
    background = ErdosRenyiBackground(q_bg=config.q_bg) if config.background == "erdos_renyi" else NoBackground()
    return LocalModelParams(n=config.n, k=config.k, p=config.p, q=config.q, background=background, permute=config.permute)


def load_graph(config: RunConfig) -> Graph:
    """With ``--labeled`` the node names are relabeled 0..n-1 and the id map is written next to the graph."""
    if config.graph is None:
        raise UsageError("--graph is required")
    with open(config.graph) as handle:
        if not config.labeled:
            return load_edge_list(handle)
        g, labels = load_labeled_edge_list(handle)
    label_map = config.label_map or f"{config.graph}.labels"
    with open(label_map, "w") as handle:
        write_label_map(labels, handle)
    logger.info(f"Wrote the id map of {len(labels)} labeled nodes to {label_map}")
    return g


def load_target_file(config: RunConfig, g: Graph) -> NodeSet:
    if config.target is None:
        raise UsageError("--target is required")
    with open(config.target) as handle:
        target = load_target(handle)
    if target and target[-1] >= g.n:
        raise UsageError(f"target node {target[-1]} out of range for n={g.n}")
    return target


def require_seed(config: RunConfig, g: Graph) -> int:
    if config.seed_node is None:
        raise UsageError("--seed-node is required")
    if config.seed_node >= g.n:
        raise UsageError(f"seed node {config.seed_node} out of range for n={g.n}")
    return config.seed_node


def meta_for(config: RunConfig) -> dict[str, Any]:
    return build_meta(config.echo(), config.rng_seed, config.timestamp)


@contextmanager
def open_output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", newline="") as handle:
        yield handle
    logger.info(f"Wrote {path}")


def execute(handler: Callable[[RunConfig], int], command: str, flags: dict[str, Any]) -> int:
    """Resolves the config and runs ``handler``, mapping failures to exit codes."""
    try:
        config = resolve_config(command, flags)
        return handler(config)
    except USAGE_ERRORS as e:
        logger.error(f"{command}: {e}")
        return EXIT_USAGE
    except LocalityBudgetExceeded as e:
        logger.error(f"{command}: {e}")
        return EXIT_INVARIANT_FAILURE


# Flags default to None so that only values given on the command line override
# the config file and environment.
def add_io_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file with defaults for any flag")
    parser.add_argument("--out", help="output path (stdout when omitted)")
    parser.add_argument("--format", choices=["json", "csv"])
    parser.add_argument("--no-timestamp", dest="timestamp", action="store_const", const=False)
    parser.add_argument("--rng-seed", type=int)


def add_graph_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", help="edge list file")
    parser.add_argument(
        "--labeled",
        action="store_const",
        const=True,
        help="node names are arbitrary strings; ids are assigned in first-seen order",
    )
    parser.add_argument("--label-map", help="where --labeled writes the id map (default GRAPH.labels)")


def add_problem_flags(parser: argparse.ArgumentParser) -> None:
    add_graph_flags(parser)
    parser.add_argument("--target", help="target cluster file, one node id per line")
    parser.add_argument("--seed-node", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-touch", type=int)


def add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--p", type=float)
    parser.add_argument("--q", type=float)
    parser.add_argument("--background", choices=["none", "erdos_renyi", "sbm"])
    parser.add_argument("--q-bg", type=float)
    parser.add_argument("--clusters", type=int)
    parser.add_argument("--cluster-size", type=int)
    parser.add_argument("--p-in", type=float)
    parser.add_argument("--p-out", type=float)
    parser.add_argument("--permute", action="store_const", const=True)
