import math

import numpy as np
import pytest

from conftest import make_grid, make_grid_m
from errors import ValidationError
from gravity_graph import (
    GravityParams,
    build_gravity_network,
    edge_summary,
    gravity_weight,
    gravity_weight_matrix,
    normalized_distance,
    read_edge_list,
    write_edge_list,
)
from grid_raster import CoarseGrid, GridCell


def test_normalized_distance_examples():
    r = normalized_distance(make_grid([1, 1], 1, 2))
    assert r[0, 1] == 1.0

    r = normalized_distance(make_grid([1, 1, 1], 1, 3))
    assert r[0, 1] == pytest.approx(0.5)
    assert r[1, 2] == pytest.approx(0.5)
    assert r[0, 2] == pytest.approx(1.0)

    r = normalized_distance(make_grid([1] * 4, 2, 2))
    assert r[0, 1] == pytest.approx(1 / math.sqrt(2))
    assert r[0, 2] == pytest.approx(1 / math.sqrt(2))
    assert r[0, 3] == pytest.approx(1.0)
    assert np.isnan(np.diag(r)).all()


def test_normalized_distance_degenerate():
    with pytest.raises(ValidationError):
        normalized_distance(make_grid([1], 1, 1))
    cells = (GridCell(0, (1.0, 1.0), 0.0, 0.0), GridCell(1, (1.0, 1.0), 0.0, 0.0))
    with pytest.raises(ValidationError):
        normalized_distance(CoarseGrid(1, 2, (0.0, 0.0, 2.0, 2.0), cells))


def test_gravity_weight():
    assert gravity_weight(2.0, 3.0, 0.5, 1.0) == 12.0
    assert gravity_weight(0.0, 7.0, 0.3, 2.0) == 0.0
    for P in (0.5, 1.0, 3.0):
        assert gravity_weight(2.0, 5.0, 1.0, P) == 10.0
    with pytest.raises(ValidationError):
        gravity_weight(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        gravity_weight(1.0, 1.0, -0.5, 1.0)


def test_weight_decreases_with_distance():
    weights = [gravity_weight(2.0, 3.0, r, 1.5) for r in (0.1, 0.2, 0.5, 0.9, 1.0)]
    assert all(a > b for a, b in zip(weights, weights[1:]))


def test_three_node_line_example():
    grid = make_grid_m([2.0, 2.0, 0.0], 1, 3)
    net = build_gravity_network(grid, GravityParams(P=1.0, tau=5.0, k_rewire=1))
    edges = {(i, j): (w, rewired) for i, j, w, rewired in net.edges()}
    assert edges[(0, 1)][0] == pytest.approx(8.0)
    assert edges[(0, 1)][1] is False
    # node 2 is rewired to its nearest neighbour, node 1, with weight 0
    assert edges[(1, 2)] == (0.0, True)
    assert (0, 2) not in edges


def test_all_dark_grid_only_rewired_zero_edges():
    grid = make_grid([0] * 9, 3, 3)
    net = build_gravity_network(grid, GravityParams(P=1.0, tau=1.0, k_rewire=1))
    edges = list(net.edges())
    assert edges
    assert all(w == 0.0 and rewired for _, _, w, rewired in edges)
    assert min(net.degree(v) for v in range(9)) >= 1


def test_tau_zero_keeps_complete_graph():
    grid = make_grid([3, 1, 4, 1, 5, 9], 2, 3)
    net = build_gravity_network(grid, GravityParams(P=1.0, tau=0.0, k_rewire=2))
    assert edge_summary(net) == {"edges": 15, "rewired_edges": 0}


def test_k_must_be_below_node_count():
    with pytest.raises(ValidationError):
        build_gravity_network(make_grid([1, 2, 3, 4], 2, 2), GravityParams(k_rewire=4))


def test_params_validation():
    with pytest.raises(ValidationError):
        GravityParams(tau=-1.0)
    with pytest.raises(ValidationError):
        GravityParams(k_rewire=0)
    with pytest.raises(ValidationError):
        GravityParams(P=-0.5)


def test_rewiring_tie_goes_to_lower_id():
    # every node of a unit 2x2 grid has two neighbours at distance 1
    grid = make_grid_m([1.0, 1.0, 1.0, 1.0], 2, 2)
    net = build_gravity_network(grid, GravityParams(P=1.0, tau=1e9, k_rewire=1))
    assert {(i, j) for i, j, _, _ in net.edges()} == {(0, 1), (0, 2), (1, 3)}


def test_random_grid_invariants(rng):
    for trial in range(200):
        rows, cols = int(rng.integers(1, 21)), int(rng.integers(2, 21))
        n = rows * cols
        m = rng.uniform(0.0, 6.0, n) * (rng.random(n) > 0.2)
        grid = make_grid_m(m, rows, cols)
        P = float(rng.uniform(0.5, 3.0))
        w = gravity_weight_matrix(grid, P)
        off = w[~np.eye(n, dtype=bool)]
        tau = float(np.quantile(off, rng.uniform(0.8, 1.0)))
        k = int(rng.integers(1, min(5, n - 1) + 1))
        net = build_gravity_network(grid, GravityParams(P=P, tau=tau, k_rewire=k))

        seen = set()
        for i, j, weight, rewired in net.edges():
            assert i < j and (i, j) not in seen
            seen.add((i, j))
            assert net.weight(i, j) == net.weight(j, i) == weight
            assert weight == w[i, j]
            if not rewired:
                assert weight >= tau
            if weight < tau:
                assert rewired
        # every pair at or above tau survives
        src, dst = np.nonzero(np.triu(w >= tau, k=1))
        assert all(net.has_edge(int(i), int(j)) for i, j in zip(src, dst))
        assert min(net.degree(v) for v in range(n)) >= min(k, n - 1)

        c = float(rng.uniform(0.1, 4.0))
        scaled = gravity_weight_matrix(make_grid_m(m * c, rows, cols), P)
        np.testing.assert_allclose(scaled, c * c * w, rtol=1e-10, atol=1e-10)


def test_edge_list_reads_back(tmp_path):
    grid = make_grid([10, 200, 30, 0, 5, 90], 2, 3)
    net = build_gravity_network(grid, GravityParams(P=1.0, tau=20.0, k_rewire=2))
    path = tmp_path / "edges.tsv"
    write_edge_list(net, path)
    assert path.read_text().splitlines()[0] == "src\tdst\tweight\trewired"
    back = read_edge_list(path, grid)
    assert list(back.edges()) == list(net.edges())


def test_edge_list_rejects_duplicates(tmp_path):
    grid = make_grid([1, 2, 3], 1, 3)
    path = tmp_path / "dup.tsv"
    path.write_text("src\tdst\tweight\trewired\n0\t1\t1.0\t0\n1\t0\t1.0\t0\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_edge_list(path, grid)
