"""Gravity network construction and K-tau sparsification."""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from errors import ParseError, ValidationError
from grid_raster import CoarseGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GravityParams:
    """Edge-weight exponent P, threshold tau and minimum degree K."""

    P: float = 1.0
    tau: float = 5.0
    k_rewire: int = 3

    def __post_init__(self):
        if self.P < 0:
            raise ValidationError(f"gravity.P must be >= 0, got {self.P}")
        if self.tau < 0:
            raise ValidationError(f"gravity.tau must be >= 0, got {self.tau}")
        if int(self.k_rewire) != self.k_rewire or self.k_rewire < 1:
            raise ValidationError(f"gravity.k_rewire must be an integer >= 1, got {self.k_rewire}")


@dataclass(frozen=True)
class NetworkNode:
    node_id: int
    center: Tuple[float, float]
    M: float


@dataclass(frozen=True)
class GravityNetwork:
    """Undirected weighted gravity graph over coarse-grid nodes.

    The underlying networkx graph is frozen; node ids are 0..N-1.
    """

    nodes: Tuple[NetworkNode, ...]
    graph: nx.Graph

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def to_networkx(self) -> nx.Graph:
        return self.graph

    def has_edge(self, i: int, j: int) -> bool:
        return self.graph.has_edge(i, j)

    def weight(self, i: int, j: int) -> float:
        return self.graph[i][j]["weight"]

    def degree(self, v: int) -> int:
        return self.graph.degree(v)

    def edges(self) -> Iterator[Tuple[int, int, float, bool]]:
        """Yield (src, dst, weight, rewired) with src < dst, sorted by (src, dst)."""
        for i, j in sorted((min(u, v), max(u, v)) for u, v in self.graph.edges()):
            data = self.graph[i][j]
            yield i, j, data["weight"], data["rewired"]

    @cached_property
    def adjacency(self) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
        """node -> (neighbor ids ascending, matching weights)."""
        table = {}
        for v in range(self.node_count):
            nbrs = np.array(sorted(self.graph.neighbors(v)), dtype=np.int64)
            weights = np.array([self.graph[v][x]["weight"] for x in nbrs], dtype=float)
            table[v] = (nbrs, weights)
        return table

    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.graph.edges(data="weight")))


def normalized_distance(grid: CoarseGrid) -> np.ndarray:
    """Pairwise center distance in degree space divided by the largest pairwise distance.

    Returns:
        Symmetric N x N matrix; the diagonal is set to NaN (self-pairs are excluded)

    Raises:
        ValidationError: If the grid has fewer than two nodes or all centers coincide
    """
    if grid.node_count < 2:
        raise ValidationError("normalized_distance needs at least two nodes")
    dist = squareform(pdist(grid.centers()))
    longest = dist.max()
    if longest <= 0:
        raise ValidationError("all cell centers coincide; distances cannot be normalized")
    r = dist / longest
    np.fill_diagonal(r, np.nan)
    return r


def gravity_weight(M_i: float, M_j: float, R: float, P: float) -> float:
    """W = M_i * M_j / R**P.

    Raises:
        ValidationError: If R <= 0
    """
    if not R > 0:
        raise ValidationError(f"normalized distance must be positive, got {R}")
    return M_i * M_j / R ** P


def gravity_weight_matrix(grid: CoarseGrid, P: float, distance: np.ndarray = None) -> np.ndarray:
    """Pre-threshold gravity weights for every pair; the diagonal is 0."""
    r = normalized_distance(grid) if distance is None else distance
    m = grid.log_intensities()
    if (np.nan_to_num(r, nan=1.0) <= 0).any():
        raise ValidationError("two distinct nodes share a center; normalized distance is zero")
    with np.errstate(invalid="ignore"):
        w = np.outer(m, m) / r ** P
    np.fill_diagonal(w, 0.0)
    return w


def _nearest_neighbors(dist_row: np.ndarray, v: int, k: int) -> np.ndarray:
    ids = np.arange(dist_row.size)
    keys = np.where(ids == v, np.inf, dist_row)
    order = np.lexsort((ids, keys))
    return order[:k]


def build_gravity_network(grid: CoarseGrid, params: GravityParams) -> GravityNetwork:
    """Build the complete gravity graph, drop edges below tau and rewire under-connected nodes.

    Args:
        grid: Coarse node lattice with log intensities
        params: P, tau and K

    Returns:
        Frozen GravityNetwork; rewired edges carry their gravity weight and rewired=True

    Raises:
        ValidationError: If K is not below the node count, or distances are degenerate
    """
    n = grid.node_count
    if params.k_rewire >= n:
        raise ValidationError(f"gravity.k_rewire ({params.k_rewire}) must be below the node count ({n})")

    r = normalized_distance(grid)
    w = gravity_weight_matrix(grid, params.P, r)

    graph = nx.Graph()
    m = grid.log_intensities()
    for cell in grid.cells:
        graph.add_node(cell.node_id, center=cell.center, M=cell.log_intensity, I=cell.total_intensity)

    src, dst = np.triu_indices(n, k=1)
    kept = w[src, dst] >= params.tau
    graph.add_edges_from(
        (int(i), int(j), {"weight": float(w[i, j]), "rewired": False})
        for i, j in zip(src[kept], dst[kept])
    )
    kept_count = graph.number_of_edges()

    # rewiring uses degrees right after thresholding
    thin = [v for v in range(n) if graph.degree(v) < params.k_rewire]
    dist = np.nan_to_num(r, nan=0.0)
    for v in thin:
        for x in _nearest_neighbors(dist[v], v, params.k_rewire):
            x = int(x)
            if not graph.has_edge(v, x):
                graph.add_edge(v, x, weight=float(w[v, x]), rewired=True)

    logger.info(
        "Gravity network: %d nodes, %d edges kept at tau=%g, %d rewired edge(s) for %d node(s)",
        n, kept_count, params.tau, graph.number_of_edges() - kept_count, len(thin),
    )
    nodes = tuple(NetworkNode(c.node_id, c.center, float(m[c.node_id])) for c in grid.cells)
    return GravityNetwork(nodes, nx.freeze(graph))


def write_edge_list(net: GravityNetwork, path) -> None:
    """Write `src\\tdst\\tweight\\trewired` with src < dst."""
    rows = list(net.edges())
    df = pd.DataFrame(rows, columns=["src", "dst", "weight", "rewired"])
    df["rewired"] = df["rewired"].astype(int)
    df.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n")


def read_edge_list(path, grid: CoarseGrid) -> GravityNetwork:
    """Rebuild a GravityNetwork from an edge list and its coarse grid.

    Raises:
        ParseError: On missing columns, self-edges or duplicate pairs
    """
    path = Path(path)
    df = pd.read_csv(path, sep="\t", float_precision="round_trip")
    missing = {"src", "dst", "weight", "rewired"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"edge list is missing column(s) {sorted(missing)}")

    graph = nx.Graph()
    for cell in grid.cells:
        graph.add_node(cell.node_id, center=cell.center, M=cell.log_intensity, I=cell.total_intensity)
    for line_no, row in enumerate(df.itertuples(index=False), start=2):
        i, j = int(row.src), int(row.dst)
        if i == j:
            raise ParseError(path, line_no, f"self-edge on node {i}")
        if graph.has_edge(i, j):
            raise ParseError(path, line_no, f"duplicate edge {i}-{j}")
        if i not in graph or j not in graph:
            raise ParseError(path, line_no, f"edge {i}-{j} references an unknown node")
        graph.add_edge(i, j, weight=float(row.weight), rewired=bool(row.rewired))

    nodes = tuple(NetworkNode(c.node_id, c.center, c.log_intensity) for c in grid.cells)
    return GravityNetwork(nodes, nx.freeze(graph))


def edge_summary(net: GravityNetwork) -> Dict[str, int]:
    rewired = sum(1 for *_, flag in net.edges() if flag)
    return {"edges": net.graph.number_of_edges(), "rewired_edges": rewired}
