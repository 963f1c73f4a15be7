from hypothesis import strategies as st

from services.graph_core import Graph
from services.l1pr_solver import PageRankProblem


@st.composite
def connected_graphs(draw, min_nodes: int = 2, max_nodes: int = 7, weighted: bool = False) -> Graph:
    """A random spanning tree plus a random set of extra edges."""
    n = draw(st.integers(min_nodes, max_nodes))
    weight = st.floats(0.25, 4.0) if weighted else st.just(1.0)
    edges = {}
    for i in range(1, n):
        j = draw(st.integers(0, i - 1))
        edges[(j, i)] = draw(weight)
    spare = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges]
    if spare:
        for pair in draw(st.lists(st.sampled_from(spare), unique=True, max_size=len(spare))):
            edges[pair] = draw(weight)
    return Graph.from_edges(n, [(u, v, w) for (u, v), w in edges.items()])


@st.composite
def problems(draw, max_nodes: int = 7, weighted: bool = False, max_rho_fraction: float = 1.2) -> PageRankProblem:
    """Single-seed problems with rho drawn as a fraction of 1/d_seed."""
    g = draw(connected_graphs(max_nodes=max_nodes, weighted=weighted))
    seed = draw(st.integers(0, g.n - 1))
    alpha = draw(st.floats(0.05, 0.95))
    fraction = draw(st.floats(0.01, max_rho_fraction))
    return PageRankProblem.single_seed(g, seed, alpha, fraction / g.degree(seed))
