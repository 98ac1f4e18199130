"""Shared builders for small grids and networks."""

import math

import networkx as nx
import numpy as np
import pytest

from gravity_graph import GravityNetwork, NetworkNode
from grid_raster import CoarseGrid, GridCell, RasterGrid


def make_grid(intensities, rows, cols, bbox=None):
    """CoarseGrid with the given per-node I (row-major), M = ln(I + 1)."""
    bbox = bbox or (0.0, 0.0, float(cols), float(rows))
    dlon = (bbox[2] - bbox[0]) / cols
    dlat = (bbox[3] - bbox[1]) / rows
    cells = []
    for node_id, total in enumerate(intensities):
        row, col = divmod(node_id, cols)
        center = (bbox[0] + (col + 0.5) * dlon, bbox[3] - (row + 0.5) * dlat)
        cells.append(GridCell(node_id, center, float(total), math.log1p(total)))
    return CoarseGrid(rows, cols, bbox, tuple(cells))


def make_grid_m(m_values, rows, cols):
    """CoarseGrid with M set directly (I = e^M - 1)."""
    return make_grid([math.expm1(m) for m in m_values], rows, cols)


def make_network(n, edges, m_values=None):
    """GravityNetwork from (i, j, weight) triples, bypassing the gravity rule."""
    m_values = m_values if m_values is not None else [1.0] * n
    graph = nx.Graph()
    for v in range(n):
        graph.add_node(v)
    for i, j, w in edges:
        graph.add_edge(i, j, weight=float(w), rewired=False)
    nodes = tuple(NetworkNode(v, (float(v), 0.0), float(m_values[v])) for v in range(n))
    return GravityNetwork(nodes, nx.freeze(graph))


def random_weighted_graph(rng, n, density=0.6):
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                edges.append((i, j, float(rng.uniform(0.1, 5.0))))
    if not edges:
        edges.append((0, 1, 1.0))
    return make_network(n, edges)


def write_asc(path, values, ll=(0.0, 0.0), cell=1.0, nodata=-9999):
    values = np.asarray(values)
    lines = [
        f"ncols {values.shape[1]}",
        f"nrows {values.shape[0]}",
        f"xllcorner {ll[0]}",
        f"yllcorner {ll[1]}",
        f"cellsize {cell}",
        f"NODATA_value {nodata}",
    ]
    lines += [" ".join(str(v) for v in row) for row in values]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def raster(values, ll=(0.0, 0.0), cell=1.0, nodata=-9999.0):
    values = np.asarray(values, dtype=float)
    return RasterGrid(values.shape[0], values.shape[1], ll, cell, nodata, values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
