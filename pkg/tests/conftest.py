import pytest
from hypothesis import HealthCheck
from hypothesis import settings as hypothesis_settings

from services.graph_core import Graph
from services.random_model import ErdosRenyiBackground, LocalModelParams, generate

hypothesis_settings.register_profile(
    "localpr",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
hypothesis_settings.load_profile("localpr")


@pytest.fixture
def dumbbell() -> Graph:
    """Triangles 0-1-2 and 3-4-5 joined by the edge 2-3."""
    edges = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]
    return Graph.from_edges(6, [(u, v, 1.0) for u, v in edges])


@pytest.fixture
def path3() -> Graph:
    return Graph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])


@pytest.fixture
def two_cliques() -> Graph:
    """Two 5-cliques (0-4 and 5-9) joined by a single edge 4-5."""
    edges = [(u, v, 1.0) for block in (range(0, 5), range(5, 10)) for u in block for v in block if u < v]
    edges.append((4, 5, 1.0))
    return Graph.from_edges(10, edges)


@pytest.fixture
def local_instance():
    params = LocalModelParams(n=120, k=12, p=0.5, q=0.01, background=ErdosRenyiBackground(q_bg=0.05))
    g, target = generate(params, seed=11)
    return params, g, target
