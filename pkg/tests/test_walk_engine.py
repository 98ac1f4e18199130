import numpy as np
import pytest

from conftest import make_network, random_weighted_graph
from errors import ParseError, ValidationError
from walk_engine import (
    WalkParams,
    first_step_distribution,
    read_walks,
    second_step_distribution,
    simulate_walks,
    write_walks,
)

TRIANGLE = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]
PATH = [(0, 1, 1.0), (1, 2, 1.0)]
FIVE_NODES = [(0, 1, 1.0), (0, 2, 2.0), (1, 2, 1.0), (1, 3, 3.0), (2, 3, 1.0), (3, 4, 2.0), (2, 4, 1.0)]


def test_first_step_examples():
    net = make_network(3, [(0, 1, 2.0), (0, 2, 2.0)])
    nbrs, probs = first_step_distribution(net, 0)
    assert nbrs.tolist() == [1, 2]
    np.testing.assert_allclose(probs, [0.5, 0.5])

    net = make_network(3, [(0, 1, 1.0), (0, 2, 3.0)])
    np.testing.assert_allclose(first_step_distribution(net, 0)[1], [0.25, 0.75])

    nbrs, probs = first_step_distribution(net, 1)
    assert nbrs.tolist() == [0]
    assert probs.tolist() == [1.0]


def test_zero_weight_neighbors_fall_back_to_uniform():
    net = make_network(3, [(0, 1, 0.0), (0, 2, 0.0)])
    np.testing.assert_allclose(first_step_distribution(net, 0)[1], [0.5, 0.5])
    np.testing.assert_allclose(second_step_distribution(net, 1, 0, WalkParams())[1], [1 / 3, 2 / 3])


def test_second_step_examples():
    params = WalkParams(p=1.0, q=0.5)
    net = make_network(2, [(0, 1, 1.0)])
    nbrs, probs = second_step_distribution(net, 0, 1, params)
    assert nbrs.tolist() == [0] and probs.tolist() == [1.0]

    nbrs, probs = second_step_distribution(make_network(3, TRIANGLE), 0, 1, params)
    assert nbrs.tolist() == [0, 2]
    np.testing.assert_allclose(probs, [0.5, 0.5])

    nbrs, probs = second_step_distribution(make_network(3, PATH), 0, 1, params)
    assert nbrs.tolist() == [0, 2]
    np.testing.assert_allclose(probs, [1 / 3, 2 / 3])


def test_distributions_are_normalized(rng):
    params = WalkParams(p=0.7, q=2.5)
    for _ in range(20):
        net = random_weighted_graph(rng, 7)
        for cur in range(net.node_count):
            if net.degree(cur) == 0:
                continue
            _, probs = first_step_distribution(net, cur)
            assert (probs >= 0).all() and abs(probs.sum() - 1) <= 1e-12
            for prev in first_step_distribution(net, cur)[0]:
                _, probs = second_step_distribution(net, int(prev), cur, params)
                assert (probs >= 0).all() and abs(probs.sum() - 1) <= 1e-12


def test_clique_without_bias_matches_first_step():
    net = make_network(5, [(i, j, float(i + j + 1)) for i in range(5) for j in range(i + 1, 5)])
    params = WalkParams(p=1.0, q=1.0)
    for cur in range(5):
        nbrs, first = first_step_distribution(net, cur)
        for prev in nbrs:
            _, second = second_step_distribution(net, int(prev), cur, params)
            np.testing.assert_allclose(second, first, rtol=0, atol=1e-15)


def test_isolated_node_and_non_edge_rejected():
    net = make_network(3, [(0, 1, 1.0)])
    with pytest.raises(ValidationError):
        first_step_distribution(net, 2)
    with pytest.raises(ValidationError):
        second_step_distribution(net, 0, 2, WalkParams())
    with pytest.raises(ValidationError):
        simulate_walks(net, WalkParams(length=2, walks_per_node=1))


def test_params_validation():
    for bad in (dict(p=0.0), dict(q=-1.0), dict(length=0), dict(walks_per_node=0), dict(workers=0)):
        with pytest.raises(ValidationError):
            WalkParams(**bad)


def test_two_node_walk_is_forced():
    net = make_network(2, [(0, 1, 1.0)])
    for seed in range(5):
        walks = simulate_walks(net, WalkParams(length=4, walks_per_node=3, seed=seed))
        assert walks.walks[0].tolist() == [[0, 1, 0, 1, 0]] * 3
        assert walks.walks[1].tolist() == [[1, 0, 1, 0, 1]] * 3


def test_single_step_walks():
    net = make_network(3, TRIANGLE)
    walks = simulate_walks(net, WalkParams(length=1, walks_per_node=10, seed=3))
    assert walks.walks.shape == (3, 10, 2)
    for k in range(3):
        assert (walks.walks[k, :, 0] == k).all()
        assert (walks.walks[k, :, 1] != k).all()


def test_walks_are_deterministic_and_valid(rng):
    net = random_weighted_graph(rng, 9, density=0.9)
    if min(net.degree(v) for v in range(9)) == 0:
        pytest.skip("random graph has an isolated node")
    params = WalkParams(p=1.0, q=0.5, length=12, walks_per_node=15, seed=42)
    first = simulate_walks(net, params)
    second = simulate_walks(net, params)
    assert np.array_equal(first.walks, second.walks)

    for k in range(9):
        assert (first.walks[k, :, 0] == k).all()
    for walk in first.walks.reshape(-1, params.length + 1):
        assert all(net.has_edge(int(a), int(b)) for a, b in zip(walk, walk[1:]))

    other = simulate_walks(net, WalkParams(p=1.0, q=0.5, length=12, walks_per_node=15, seed=43))
    assert not np.array_equal(first.walks, other.walks)


def test_worker_count_does_not_change_walks():
    net = make_network(5, FIVE_NODES)
    serial = simulate_walks(net, WalkParams(length=10, walks_per_node=40, seed=7, workers=1))
    parallel = simulate_walks(net, WalkParams(length=10, walks_per_node=40, seed=7, workers=4))
    assert np.array_equal(serial.walks, parallel.walks)


def test_empirical_transitions_match_distribution():
    net = make_network(5, FIVE_NODES)
    params = WalkParams(p=1.0, q=0.5, length=20, walks_per_node=10000, seed=11)
    walks = simulate_walks(net, params).walks.reshape(-1, params.length + 1)

    prev, cur, nxt = walks[:, :-2].ravel(), walks[:, 1:-1].ravel(), walks[:, 2:].ravel()
    assert prev.size >= 10 ** 5
    for a in range(5):
        for b in range(5):
            if not net.has_edge(a, b):
                continue
            mask = (prev == a) & (cur == b)
            nbrs, probs = second_step_distribution(net, a, b, params)
            counts = np.array([(nxt[mask] == x).sum() for x in nbrs])
            np.testing.assert_allclose(counts / mask.sum(), probs, rtol=0, atol=0.01)


def test_walk_dump_reads_back(tmp_path):
    net = make_network(3, PATH)
    walks = simulate_walks(net, WalkParams(length=3, walks_per_node=2, seed=5))
    path = tmp_path / "walks.txt"
    write_walks(walks, path)
    assert path.read_text().splitlines()[0] == "#params p=1.0 q=0.5 L=3 n=2 seed=5"
    back = read_walks(path)
    assert np.array_equal(back.walks, walks.walks)
    assert back.params == walks.params


def test_walk_dump_errors(tmp_path):
    path = tmp_path / "walks.txt"
    path.write_text("0 1 0\n", encoding="utf-8")
    with pytest.raises(ParseError):
        read_walks(path)
    path.write_text("#params p=1.0 q=0.5 L=2 n=1 seed=0\n0 1 0\n1 0\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        read_walks(path)
    assert err.value.line_no == 3
