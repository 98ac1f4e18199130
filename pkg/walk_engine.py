"""Second-order biased random walks (return parameter p, in-out parameter q) on the gravity network."""

import bisect
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from errors import ParseError, ValidationError
from gravity_graph import GravityNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkParams:
    p: float = 1.0
    q: float = 0.5
    length: int = 20
    walks_per_node: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.p > 0 or not self.q > 0:
            raise ValidationError(f"walk.p and walk.q must be positive, got p={self.p}, q={self.q}")
        if self.length < 1:
            raise ValidationError(f"walk.length must be >= 1, got {self.length}")
        if self.walks_per_node < 1:
            raise ValidationError(f"walk.walks_per_node must be >= 1, got {self.walks_per_node}")
        if self.workers < 1:
            raise ValidationError(f"walk.workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class WalkSet:
    """walks[k, w] is the w-th walk from node k: origin followed by `length` steps."""

    walks: np.ndarray = field(repr=False)
    params: WalkParams

    def __post_init__(self):
        self.walks.setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.walks.shape[0]

    @property
    def walks_per_node(self) -> int:
        return self.walks.shape[1]

    @property
    def length(self) -> int:
        return self.walks.shape[2] - 1


def _neighbors(net: GravityNetwork, v: int) -> Tuple[np.ndarray, np.ndarray]:
    if v not in net.adjacency:
        raise ValidationError(f"node {v} is not in the network")
    nbrs, weights = net.adjacency[v]
    if nbrs.size == 0:
        raise ValidationError(f"node {v} is isolated; the degree floor was not enforced upstream")
    return nbrs, weights


def _normalize(scores: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    total = scores.sum()
    if total <= 0:
        scores, total = fallback, fallback.sum()
    return scores / total


def first_step_distribution(net: GravityNetwork, v: int) -> Tuple[np.ndarray, np.ndarray]:
    """Weight-proportional distribution over the neighbors of v.

    Returns:
        (neighbor ids ascending, probabilities). Uniform when every neighbor weight is 0.

    Raises:
        ValidationError: If v is unknown or isolated
    """
    nbrs, weights = _neighbors(net, v)
    return nbrs, _normalize(weights, np.ones_like(weights))


def second_step_distribution(net: GravityNetwork, prev: int, cur: int, params: WalkParams) -> Tuple[np.ndarray, np.ndarray]:
    """Biased distribution over the neighbors of cur, having arrived from prev.

    Neighbor x scores alpha * W(cur, x) with alpha = 1/p if x == prev, 1 if x is
    adjacent to prev, 1/q otherwise.

    Raises:
        ValidationError: If (prev, cur) is not an edge
    """
    if not net.has_edge(prev, cur):
        raise ValidationError(f"({prev}, {cur}) is not an edge of the network")
    nbrs, weights = _neighbors(net, cur)
    alpha = np.array(
        [1.0 / params.p if x == prev else (1.0 if net.has_edge(x, prev) else 1.0 / params.q) for x in nbrs]
    )
    return nbrs, _normalize(alpha * weights, alpha)


class _TransitionTables:
    """Lazily built cumulative tables keyed by node (first step) or directed edge (later steps)."""

    def __init__(self, net: GravityNetwork, params: WalkParams):
        self.net = net
        self.params = params
        self._first: Dict[int, Tuple[List[int], List[float]]] = {}
        self._second: Dict[Tuple[int, int], Tuple[List[int], List[float]]] = {}

    @staticmethod
    def _table(nbrs, probs):
        return nbrs.tolist(), list(itertools.accumulate(probs.tolist()))

    def first(self, v):
        table = self._first.get(v)
        if table is None:
            table = self._first[v] = self._table(*first_step_distribution(self.net, v))
        return table

    def second(self, prev, cur):
        key = (prev, cur)
        table = self._second.get(key)
        if table is None:
            table = self._second[key] = self._table(*second_step_distribution(self.net, prev, cur, self.params))
        return table


def _draw(table, u: float) -> int:
    nbrs, cdf = table
    # u * cdf[-1] absorbs rounding in the accumulated sum
    idx = bisect.bisect_right(cdf, u * cdf[-1])
    return nbrs[min(idx, len(nbrs) - 1)]


def walk_stream(seed: int, node: int, walk_index: int) -> np.random.Generator:
    """Random stream of one walk; depends only on (seed, node, walk_index)."""
    return np.random.default_rng([seed, node, walk_index])


def _walks_from(node: int, tables: _TransitionTables, params: WalkParams) -> np.ndarray:
    out = np.empty((params.walks_per_node, params.length + 1), dtype=np.int64)
    for w in range(params.walks_per_node):
        draws = walk_stream(params.seed, node, w).random(params.length)
        walk = [node, _draw(tables.first(node), draws[0])]
        for u in draws[1:]:
            walk.append(_draw(tables.second(walk[-2], walk[-1]), u))
        out[w] = walk
    return out


def simulate_walks(net: GravityNetwork, params: WalkParams) -> WalkSet:
    """Run walks_per_node walks of `length` steps from every node.

    Step 1 follows first_step_distribution, later steps second_step_distribution.
    Output is identical for any worker count.
    """
    tables = _TransitionTables(net, params)
    nodes = range(net.node_count)
    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            blocks = list(pool.map(lambda k: _walks_from(k, tables, params), nodes))
    else:
        blocks = [_walks_from(k, tables, params) for k in nodes]

    walks = np.stack(blocks) if blocks else np.empty((0, params.walks_per_node, params.length + 1), dtype=np.int64)
    logger.info(
        "Simulated %d walk(s) of length %d (p=%g, q=%g, %d transition table(s))",
        walks.shape[0] * walks.shape[1], params.length, params.p, params.q, len(tables._second),
    )
    return WalkSet(walks, params)


def write_walks(walks: WalkSet, path) -> None:
    """Dump walks one per line after a `#params` header."""
    p = walks.params
    lines = [f"#params p={p.p!r} q={p.q!r} L={p.length} n={p.walks_per_node} seed={p.seed}"]
    for walk in walks.walks.reshape(-1, walks.length + 1):
        lines.append(" ".join(str(int(x)) for x in walk))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_walks(path) -> WalkSet:
    """Read a walk dump written by write_walks.

    Raises:
        ParseError: On a bad header or a walk of the wrong length
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#params"):
        raise ParseError(path, 1, "missing '#params' header")
    try:
        fields = dict(item.split("=", 1) for item in lines[0].split()[1:])
        params = WalkParams(
            p=float(fields["p"]), q=float(fields["q"]), length=int(fields["L"]),
            walks_per_node=int(fields["n"]), seed=int(fields["seed"]),
        )
    except (KeyError, ValueError) as e:
        raise ParseError(path, 1, f"bad '#params' header ({e})") from None

    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        ids = [int(x) for x in line.split()]
        if len(ids) != params.length + 1:
            raise ParseError(path, line_no, f"walk has {len(ids)} entries, expected {params.length + 1}")
        rows.append(ids)
    if len(rows) % params.walks_per_node:
        raise ParseError(path, None, f"{len(rows)} walks is not a multiple of n={params.walks_per_node}")
    walks = np.array(rows, dtype=np.int64).reshape(-1, params.walks_per_node, params.length + 1)
    return WalkSet(walks, params)
