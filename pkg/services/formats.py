import csv
import json
import logging
from datetime import datetime, timezone
from typing import Any, Iterable, Optional, Sequence, TextIO

from services import settings
from services.errors import GraphFormatError
from services.graph_core import NodeSet
from services.l1pr_solver import SolveStats
from services.sparse_vector import SparseVector
from services.stagewise import SolutionPath

logger = logging.getLogger(__name__)

PATH_COLUMNS = ("step", "l1_norm", "implied_rho", "node", "value")
SWEEP_COLUMNS = ("rank", "node", "value", "prefix_conductance")


def build_meta(config: dict[str, Any], rng_seed: Optional[int], timestamp: bool = True) -> dict[str, Any]:
    meta = {
        "tool": "localpr",
        "version": settings.TOOL_VERSION,
        "config": config,
        "rng_seed": rng_seed,
    }
    if timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return meta


def _key_order(key: str) -> tuple[int, int, str]:
    return (0, int(key), "") if key.isdigit() else (1, 0, key)


def _ordered(value: Any) -> Any:
    """Sorts mapping keys at every depth; node-id keys go in numeric order."""
    if isinstance(value, dict):
        return {str(k): _ordered(value[k]) for k in sorted(value, key=lambda k: _key_order(str(k)))}
    if isinstance(value, (list, tuple)):
        return [_ordered(item) for item in value]
    return value


def dump_json(payload: dict[str, Any], meta: dict[str, Any]) -> str:
    return json.dumps(_ordered({"meta": meta, **payload}), indent=2) + "\n"


def write_json(stream: TextIO, payload: dict[str, Any], meta: dict[str, Any]) -> None:
    stream.write(dump_json(payload, meta))


def write_meta_lines(stream: TextIO, meta: dict[str, Any]) -> None:
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        stream.write(f"# {key}: {value}\n")


def write_csv(
    stream: TextIO,
    meta: dict[str, Any],
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> None:
    """CSV with ``# key: value`` comment lines carrying the meta block."""
    write_meta_lines(stream, meta)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)


def read_csv_rows(stream: TextIO) -> list[dict[str, str]]:
    lines = [line for line in stream if not line.startswith("#")]
    return list(csv.DictReader(lines))


def save_target(stream: TextIO, target: NodeSet, meta: Optional[dict[str, Any]] = None) -> None:
    if meta is not None:
        write_meta_lines(stream, meta)
    stream.write(f"# target: {len(target)} nodes\n")
    for node in target:
        stream.write(f"{node}\n")


def load_target(stream: TextIO) -> NodeSet:
    """One node id per line; ``#`` comments and blank lines are skipped."""
    nodes = []
    for line_number, raw in enumerate(stream, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            node = int(text)
        except ValueError:
            raise GraphFormatError(f"target node ids must be integers, got {text!r}", line_number)
        if node < 0:
            raise GraphFormatError("target node ids must be non-negative", line_number)
        nodes.append(node)
    return tuple(sorted(set(nodes)))


def solution_payload(
    x: SparseVector,
    stats: Optional[SolveStats] = None,
    timing: bool = True,
    **extra: Any,
) -> dict[str, Any]:
    """Wall time is left out when ``timing`` is off so reruns stay byte-identical."""
    payload = {"solution": x.to_dict(), "support_size": len(x), **extra}
    if stats is not None:
        payload["stats"] = stats.summary(timing)
    return payload


def load_solution(stream: TextIO) -> SparseVector:
    document = json.load(stream)
    try:
        values = document["solution"]
    except (KeyError, TypeError):
        raise GraphFormatError("solution file has no 'solution' map")
    return SparseVector({int(node): float(value) for node, value in values.items()})


def path_rows(path: SolutionPath) -> Iterable[tuple]:
    """Long format: one row per (stored point, nonzero node); the empty start point gets one blank row."""
    for point in path.points:
        if not len(point.iterate):
            yield (point.step, repr(point.l1_norm), repr(point.implied_rho), "", "")
            continue
        for node, value in point.iterate.items():
            yield (point.step, repr(point.l1_norm), repr(point.implied_rho), node, repr(value))
