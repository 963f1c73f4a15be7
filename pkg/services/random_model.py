import logging
import math
from typing import Annotated, Literal, Optional, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field, PositiveInt, model_validator

from services import settings
from services.errors import DenseGraphTooLargeError, InvalidParametersError
from services.graph_core import Graph, NodeSet
from services.sparse_vector import SparseVector

logger = logging.getLogger(__name__)


class NoBackground(BaseModel):
    kind: Literal["none"] = "none"


class ErdosRenyiBackground(BaseModel):
    kind: Literal["erdos_renyi"] = "erdos_renyi"
    q_bg: float = Field(ge=0, le=1)


class SbmBackground(BaseModel):
    kind: Literal["sbm"] = "sbm"
    cluster_sizes: list[PositiveInt]
    p_in: float = Field(ge=0, le=1)
    p_out: float = Field(ge=0, le=1)


Background = Annotated[
    Union[NoBackground, ErdosRenyiBackground, SbmBackground],
    Field(discriminator="kind"),
]


class LocalModelParams(BaseModel):
    """Target cluster K = {0..k-1} with within-K probability p and K-to-exterior probability q.

    Edges among exterior nodes come from ``background``. With ``permute`` set,
    node ids are shuffled after sampling so K is no longer a prefix.
    """

    n: PositiveInt
    k: PositiveInt
    p: float = Field(gt=0, le=1)
    q: float = Field(ge=0, le=1)
    background: Background = Field(default_factory=NoBackground)
    permute: bool = False

    @model_validator(mode="after")
    def check_sizes(self) -> "LocalModelParams":
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        if isinstance(self.background, SbmBackground) and sum(self.background.cluster_sizes) != self.n - self.k:
            raise ValueError(
                f"background cluster sizes sum to {sum(self.background.cluster_sizes)}, expected n-k={self.n - self.k}"
            )
        return self

    @classmethod
    def sbm_setup(cls, clusters: int, cluster_size: int, p: float, q: float, **kwargs) -> "LocalModelParams":
        """Planted SBM: one block is the target, the other blocks form the background."""
        return cls(
            n=clusters * cluster_size,
            k=cluster_size,
            p=p,
            q=q,
            background=SbmBackground(cluster_sizes=[cluster_size] * (clusters - 1), p_in=p, p_out=q),
            **kwargs,
        )

    @property
    def d_bar(self) -> float:
        return self.p * (self.k - 1) + self.q * (self.n - self.k)

    @property
    def gamma(self) -> float:
        if self.d_bar <= 0:
            raise InvalidParametersError("expected target degree is zero")
        return self.p * (self.k - 1) / self.d_bar


class ModelTheory(BaseModel):
    """Closed-form quantities of the local model at a given alpha and delta."""

    n: int
    k: int
    p: float
    q: float
    alpha: float
    delta: float
    d_bar: float
    gamma: float
    expected_conductance: float
    rho_delta: float
    rho_sharp: float
    rho_natural: float
    u: float
    min_exterior_degree: Optional[float] = None

    def v(self, rho: float) -> float:
        a = self.alpha
        numerator = 0.5 * (1 - a) * self.p * self.u - rho * a * self.d_bar
        return numerator / (a * self.d_bar + 0.5 * (1 - a) * self.q * (self.n - self.k))

    def population_solution(self, seed: int, target: NodeSet, rho: float) -> SparseVector:
        """u on the seed plus v on all of K, valid for rho in [rho_sharp, rho_natural)."""
        v = self.v(rho)
        values = {i: v for i in target}
        values[seed] = values.get(seed, 0.0) + self.u
        return SparseVector(values)

    def _fp_constant(self) -> float:
        a, d = self.alpha, self.delta
        return ((1 + a) / (1 - a)) ** 2 * ((1 + d) / (1 - d)) ** 3 / self.gamma**2

    def fp_volume_bound(self, vol_k: float) -> float:
        return vol_k * (self._fp_constant() - 1.0)

    def appr_fp_volume_bound(self, vol_k: float) -> float:
        # APPR support sits inside the l1 support at (1 - alpha) * rho / 2
        return vol_k * (2.0 / (1 - self.alpha) * self._fp_constant() - 1.0)

    @staticmethod
    def support_volume_cap(rho: float) -> float:
        return 1.0 / rho

    def degree_threshold(self, multiplier: float = settings.DEGREE_MULTIPLIER) -> float:
        return multiplier / (self.gamma * self.p)


def rho_at(params: LocalModelParams, alpha: float, delta: float) -> float:
    d_bar, gamma = params.d_bar, params.gamma
    return (
        ((1 - alpha) / (1 + alpha)) ** 2
        * ((1 - delta) / (1 + delta)) ** 2
        * gamma
        * params.p
        / ((1 + delta) * d_bar**2)
    )


def expected_degrees(params: LocalModelParams) -> np.ndarray:
    """Expected degree of every node in canonical (unpermuted) order."""
    n, k = params.n, params.k
    degrees = np.empty(n, dtype=np.float64)
    degrees[:k] = params.d_bar
    exterior = params.q * k
    bg = params.background
    if isinstance(bg, ErdosRenyiBackground):
        degrees[k:] = exterior + bg.q_bg * (n - k - 1)
    elif isinstance(bg, SbmBackground):
        start = k
        for size in bg.cluster_sizes:
            degrees[start:start + size] = exterior + bg.p_in * (size - 1) + bg.p_out * (n - k - size)
            start += size
    else:
        degrees[k:] = exterior
    return degrees


def min_exterior_expected_degree(params: LocalModelParams) -> Optional[float]:
    if params.k == params.n:
        return None
    return float(expected_degrees(params)[params.k:].min())


def theory(params: LocalModelParams, alpha: float, delta: float) -> ModelTheory:
    if not 0 < alpha < 1:
        raise InvalidParametersError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < delta < 1:
        raise InvalidParametersError(f"delta must lie in (0, 1), got {delta}")
    n, k, p, q = params.n, params.k, params.p, params.q
    d_bar, gamma = params.d_bar, params.gamma
    m = min_exterior_expected_degree(params)

    if m is None or q == 0:
        rho_sharp = 0.0
    else:
        rho_sharp = q * (1 - alpha) / (
            2 * alpha * d_bar * m + q * (1 - alpha) * (k * d_bar + (n - k) * m)
        )
    rho_natural = p * (1 - alpha) / (d_bar * ((1 + alpha) * d_bar + (1 - alpha) * p))
    u = 2 * alpha / ((1 + alpha) * d_bar + (1 - alpha) * p)

    return ModelTheory(
        n=n,
        k=k,
        p=p,
        q=q,
        alpha=alpha,
        delta=delta,
        d_bar=d_bar,
        gamma=gamma,
        expected_conductance=1 - gamma,
        rho_delta=rho_at(params, alpha, delta),
        rho_sharp=rho_sharp,
        rho_natural=rho_natural,
        u=u,
        min_exterior_degree=m,
    )


def q_for_gamma(gamma: float, n: int, k: int, p: float) -> float:
    """Exterior probability q giving the requested gamma = p(k-1)/d_bar."""
    if not 0 < gamma <= 1 or n == k:
        raise InvalidParametersError(f"cannot reach gamma={gamma} with n={n}, k={k}")
    return p * (k - 1) * (1 - gamma) / (gamma * (n - k))


def good_seed_probability(c: float, k: int) -> float:
    """Lower bound on P(some node of K has no exterior edge) when q = c / n."""
    return 1.0 - (1.0 - math.exp(-1.5 * c)) ** k


def _triangle_pairs(t: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Maps linear indices over {(i, j): i < j < size}, row-major, back to pairs."""
    t = t.astype(np.int64)
    b = 2 * size - 1
    i = np.floor((b - np.sqrt(float(b) * b - 8.0 * t)) / 2).astype(np.int64)
    i = np.clip(i, 0, max(size - 2, 0))

    def row_start(r):
        return r * (2 * size - r - 1) // 2

    # float sqrt can land one row off near row boundaries
    i = np.where(row_start(i) > t, i - 1, i)
    i = np.where(row_start(i + 1) <= t, i + 1, i)
    j = t - row_start(i) + i + 1
    return i, j


def _sample_within(rng: np.random.Generator, offset: int, size: int, prob: float):
    total = size * (size - 1) // 2
    if total == 0 or prob == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    count = int(rng.binomial(total, prob))
    picks = np.arange(total) if count == total else rng.choice(total, size=count, replace=False)
    i, j = _triangle_pairs(np.asarray(picks), size)
    return i + offset, j + offset


def _sample_between(rng: np.random.Generator, row0: int, rows: int, col0: int, cols: int, prob: float):
    total = rows * cols
    if total == 0 or prob == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    count = int(rng.binomial(total, prob))
    picks = np.arange(total) if count == total else rng.choice(total, size=count, replace=False)
    picks = np.asarray(picks, dtype=np.int64)
    return picks // cols + row0, picks % cols + col0


def generate(params: LocalModelParams, seed: Optional[Union[int, np.random.SeedSequence]] = None) -> tuple[Graph, NodeSet]:
    """Draws one graph from the local model.

    Blocks are always sampled in the same order (K x K, K x exterior, then the
    background blocks in id order), so a seed fixes the instance bit for bit.
    """
    rng = np.random.default_rng(seed)
    n, k = params.n, params.k
    parts = [
        _sample_within(rng, 0, k, params.p),
        _sample_between(rng, 0, k, k, n - k, params.q),
    ]
    bg = params.background
    if isinstance(bg, ErdosRenyiBackground):
        parts.append(_sample_within(rng, k, n - k, bg.q_bg))
    elif isinstance(bg, SbmBackground):
        starts = np.cumsum([k] + bg.cluster_sizes[:-1]).tolist()
        for a, (start_a, size_a) in enumerate(zip(starts, bg.cluster_sizes)):
            parts.append(_sample_within(rng, start_a, size_a, bg.p_in))
            for start_b, size_b in zip(starts[a + 1:], bg.cluster_sizes[a + 1:]):
                parts.append(_sample_between(rng, start_a, size_a, start_b, size_b, bg.p_out))

    u = np.concatenate([part[0] for part in parts])
    v = np.concatenate([part[1] for part in parts])
    target = np.arange(k)
    if params.permute:
        perm = rng.permutation(n)
        u, v, target = perm[u], perm[v], perm[target]

    matrix = sp.coo_matrix(
        (np.ones(2 * len(u)), (np.concatenate([u, v]), np.concatenate([v, u]))),
        shape=(n, n),
    ).tocsr()
    graph = Graph(matrix, warn_disconnected=False)
    logger.debug(f"Generated {graph} from {params.model_dump()} with seed {seed}")
    return graph, tuple(sorted(target.tolist()))


def population_graph(params: LocalModelParams, max_nodes: int = settings.POPULATION_MAX_NODES) -> Graph:
    """Dense expected-adjacency graph, in canonical order (K = 0..k-1)."""
    n, k = params.n, params.k
    if n > max_nodes:
        raise DenseGraphTooLargeError(f"n={n} exceeds the dense limit of {max_nodes} nodes")
    weights = np.zeros((n, n), dtype=np.float64)
    weights[:k, :k] = params.p
    weights[:k, k:] = params.q
    weights[k:, :k] = params.q
    bg = params.background
    if isinstance(bg, ErdosRenyiBackground):
        weights[k:, k:] = bg.q_bg
    elif isinstance(bg, SbmBackground):
        weights[k:, k:] = bg.p_out
        start = k
        for size in bg.cluster_sizes:
            weights[start:start + size, start:start + size] = bg.p_in
            start += size
    np.fill_diagonal(weights, 0.0)
    return Graph.from_adjacency(weights, warn_disconnected=False)


def find_good_seed(g: Graph, target: NodeSet) -> Optional[int]:
    """Lowest-id node of the target with edges, all of them inside the target."""
    members = set(target)
    for node in sorted(members):
        neighbors, _ = g.neighbors(node)
        if neighbors and all(j in members for j in neighbors):
            return node
    return None
