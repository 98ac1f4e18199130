"""Modularity communities on gravity snapshots and their tracking across years."""

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import geojson
import networkx as nx
import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from errors import ParseError, ValidationError
from grid_raster import CoarseGrid
from gravity_graph import GravityNetwork

logger = logging.getLogger(__name__)

GAIN_EPSILON = 1e-12
DEFAULT_RESTARTS = 10
EVENT_KINDS = ("continue", "merge", "split", "disappear", "appear")


@dataclass(frozen=True)
class CommunityPartition:
    """Community id per node (ids contiguous from 0) for one snapshot."""

    label: Hashable
    assignment: Tuple[int, ...]
    modularity: float

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(c) for c in self.assignment))
        if self.assignment and sorted(set(self.assignment)) != list(range(max(self.assignment) + 1)):
            raise ValidationError("community ids must be contiguous from 0")

    @property
    def community_count(self) -> int:
        return len(set(self.assignment))

    def members(self) -> Dict[int, List[int]]:
        groups = defaultdict(list)
        for node, community in enumerate(self.assignment):
            groups[community].append(node)
        return dict(sorted(groups.items()))


@dataclass(frozen=True)
class TransitionEvent:
    kind: str
    sources: Tuple[int, ...]
    targets: Tuple[int, ...]
    overlaps: Tuple[float, ...]


@dataclass(frozen=True)
class TransitionReport:
    label_from: Hashable
    label_to: Hashable
    events: Tuple[TransitionEvent, ...]

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)


def _graph(net: GravityNetwork) -> nx.Graph:
    """Weighted copy with nodes and edges inserted in id order, so detection ignores build order."""
    graph = nx.Graph()
    graph.add_nodes_from(range(net.node_count))
    graph.add_weighted_edges_from((i, j, w) for i, j, w, _ in net.edges())
    return graph


def _groups(assignment: Sequence[int]) -> List[set]:
    groups = defaultdict(set)
    for node, community in enumerate(assignment):
        groups[community].add(node)
    return list(groups.values())


def modularity(net: GravityNetwork, assignment: Sequence[int], resolution: float = 1.0) -> float:
    """Weighted modularity Q = (1/2m) sum_ij [W_ij - gamma k_i k_j / 2m] delta(c_i, c_j).

    The graph has no self-edges, so W_ii = 0; the null-model term runs over all pairs.

    Raises:
        ValidationError: If the assignment does not cover every node or the total weight is 0
    """
    n = net.node_count
    if len(assignment) != n:
        raise ValidationError(f"assignment covers {len(assignment)} nodes, network has {n}")
    if net.total_weight() <= 0:
        raise ValidationError("modularity is undefined on a network with zero total weight")
    return float(nx.community.modularity(_graph(net), _groups(assignment), weight="weight", resolution=resolution))


def _relabel(labels: Sequence[int]) -> List[int]:
    """Renumber communities 0.. in order of their lowest member."""
    mapping: Dict[int, int] = {}
    return [mapping.setdefault(int(c), len(mapping)) for c in labels]


def _labels(communities: Sequence[set], n: int) -> np.ndarray:
    labels = np.empty(n, dtype=np.int64)
    for c, members in enumerate(communities):
        labels[list(members)] = c
    return labels


class _Refiner:
    """Single-node moves and pairwise community merges on the original graph.

    Every move is taken only when it raises Q by more than GAIN_EPSILON, so a
    settled assignment is a local maximum under single-node moves.
    """

    def __init__(self, net: GravityNetwork, resolution: float):
        self.n = net.node_count
        self.adjacency = net.adjacency
        self.k = np.array([self.adjacency[v][1].sum() for v in range(self.n)])
        self.two_m = float(self.k.sum())
        self.resolution = resolution
        edges = list(net.edges())
        self.src = np.array([i for i, _, _, _ in edges], dtype=np.int64)
        self.dst = np.array([j for _, j, _, _ in edges], dtype=np.int64)
        self.w = np.array([w for _, _, w, _ in edges], dtype=float)

    def node_pass(self, labels: np.ndarray) -> bool:
        """Visit nodes by id; move each to the community (or an empty one) with the best gain.

        Among exactly equal gains the lowest community id wins.
        """
        tot = np.bincount(labels, weights=self.k, minlength=self.n)
        moved = False
        for i in range(self.n):
            own = labels[i]
            k_i = self.k[i]
            tot[own] -= k_i
            nbrs, weights = self.adjacency[i]
            links = np.bincount(labels[nbrs], weights=weights, minlength=self.n)
            score = links - self.resolution * tot * k_i / self.two_m
            best = int(np.argmax(score))
            if 2.0 * (score[best] - score[own]) / self.two_m <= GAIN_EPSILON:
                best = own
            labels[i] = best
            tot[best] += k_i
            moved |= best != own
        return moved

    def merge_pass(self, labels: np.ndarray) -> bool:
        """Merge the pair of communities with the largest modularity gain, if any gain is positive."""
        ids, inverse = np.unique(labels, return_inverse=True)
        if ids.size < 2:
            return False
        between = np.zeros((ids.size, ids.size))
        np.add.at(between, (inverse[self.src], inverse[self.dst]), self.w)
        between += between.T
        tot = np.bincount(inverse, weights=self.k, minlength=ids.size)
        gain = 2.0 * (between - self.resolution * np.outer(tot, tot) / self.two_m) / self.two_m
        np.fill_diagonal(gain, -np.inf)
        a, b = np.unravel_index(int(np.argmax(gain)), gain.shape)
        if gain[a, b] <= GAIN_EPSILON:
            return False
        labels[labels == ids[b]] = ids[a]
        return True

    def settle(self, labels: np.ndarray) -> np.ndarray:
        labels = labels.copy()
        while True:
            while self.node_pass(labels):
                pass
            if not self.merge_pass(labels):
                return labels


def detect_communities(
    net: GravityNetwork,
    resolution: float = 1.0,
    seed: Optional[int] = None,
    label: Hashable = None,
    restarts: int = DEFAULT_RESTARTS,
) -> CommunityPartition:
    """Louvain modularity maximization, settled by single-node moves.

    networkx's Louvain runs `restarts` times with seeds drawn from `seed`
    (None means 0). Each result, and the one-community partition, is settled
    by node-id ordered single-node moves and community merges on the original
    graph; the highest Q wins, earlier candidates on ties. The result is a
    local maximum under single-node moves.

    Args:
        net: Gravity network
        resolution: Weight of the null-model term; 1 is standard modularity
        seed: Seed for the Louvain visiting orders
        label: Snapshot label (e.g. the year)
        restarts: Number of Louvain runs

    Returns:
        CommunityPartition; on a zero-weight network every node is its own community

    Raises:
        ValidationError: If restarts < 1
    """
    if restarts < 1:
        raise ValidationError(f"community.restarts must be >= 1, got {restarts}")
    n = net.node_count
    if net.total_weight() <= 0:
        logger.warning("Network %s has zero total weight; returning singleton communities", label)
        return CommunityPartition(label, tuple(range(n)), 0.0)

    graph = _graph(net)
    refiner = _Refiner(net, resolution)
    seeds = np.random.default_rng(0 if seed is None else seed).integers(0, 2 ** 31 - 1, size=restarts)
    candidates = [
        _labels(nx.community.louvain_communities(graph, weight="weight", resolution=resolution, seed=int(s)), n)
        for s in seeds
    ]
    candidates.append(np.zeros(n, dtype=np.int64))

    best, best_q = None, -np.inf
    for start in candidates:
        assignment = _relabel(refiner.settle(start))
        q = float(nx.community.modularity(graph, _groups(assignment), weight="weight", resolution=resolution))
        if q > best_q + GAIN_EPSILON:
            best, best_q = assignment, q
    logger.info("Snapshot %s: %d communities, Q=%.5f (best of %d Louvain run(s))",
                label, len(set(best)), best_q, restarts)
    return CommunityPartition(label, tuple(best), best_q)


def track_communities(part_t: CommunityPartition, part_t1: CommunityPartition,
                      threshold: float = 0.3) -> TransitionReport:
    """Match communities of consecutive snapshots by overlap |A & B| / |A|.

    A maps to every B with overlap >= threshold. Several targets is a split and
    none is a disappear. Communities with a single target merge when at least
    two of them share that target, and continue otherwise, even if a split also
    feeds the same target. Targets without sources appear.

    Raises:
        ValidationError: If the partitions cover different node sets
    """
    if len(part_t.assignment) != len(part_t1.assignment):
        raise ValidationError(
            f"partitions cover different node sets ({len(part_t.assignment)} vs {len(part_t1.assignment)} nodes)"
        )
    if not 0 < threshold <= 1:
        raise ValidationError(f"overlap threshold must be in (0, 1], got {threshold}")

    before = part_t.members()
    after = part_t1.members()
    targets: Dict[int, List[Tuple[int, float]]] = {}
    for a, nodes in before.items():
        counts = defaultdict(int)
        for v in nodes:
            counts[part_t1.assignment[v]] += 1
        targets[a] = [(b, counts[b] / len(nodes)) for b in sorted(counts) if counts[b] / len(nodes) >= threshold]

    sources: Dict[int, List[int]] = defaultdict(list)
    for a, mapped in targets.items():
        for b, _ in mapped:
            sources[b].append(a)

    events: List[TransitionEvent] = []
    merges: Dict[int, List[Tuple[int, float]]] = defaultdict(list)
    for a, mapped in targets.items():
        if not mapped:
            events.append(TransitionEvent("disappear", (a,), (), ()))
        elif len(mapped) > 1:
            events.append(TransitionEvent("split", (a,), tuple(b for b, _ in mapped), tuple(o for _, o in mapped)))
        else:
            b, overlap = mapped[0]
            if len(sources[b]) > 1:
                merges[b].append((a, overlap))
            else:
                events.append(TransitionEvent("continue", (a,), (b,), (overlap,)))
    for b, members in sorted(merges.items()):
        kind = "merge" if len(members) > 1 else "continue"
        events.append(TransitionEvent(kind, tuple(a for a, _ in members), (b,), tuple(o for _, o in members)))
    for b in after:
        if b not in sources:
            events.append(TransitionEvent("appear", (), (b,), ()))

    events.sort(key=lambda e: (e.sources[:1] or (len(before),), e.targets))
    report = TransitionReport(part_t.label, part_t1.label, tuple(events))
    logger.info(
        "Tracked %s -> %s: %s", part_t.label, part_t1.label,
        ", ".join(f"{report.count(kind)} {kind}" for kind in EVENT_KINDS),
    )
    return report


def write_partition(partition: CommunityPartition, path) -> None:
    df = pd.DataFrame({"node_id": range(len(partition.assignment)), "community_id": partition.assignment})
    df.to_csv(path, index=False, lineterminator="\n")


def read_partition(path, label: Hashable = None) -> CommunityPartition:
    """Read `node_id,community_id`; modularity is unknown and stored as NaN."""
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    if {"node_id", "community_id"} - set(df.columns):
        raise ParseError(path, 1, "partition needs node_id and community_id columns")
    df = df.sort_values("node_id")
    if df["node_id"].tolist() != list(range(len(df))):
        raise ParseError(path, None, "node ids must be exactly 0..N-1")
    return CommunityPartition(label, tuple(df["community_id"].astype(int)), float("nan"))


def _ids(values) -> str:
    return " ".join(str(v) for v in values)


def write_transitions(report: TransitionReport, csv_path, text_path=None) -> None:
    """Write `kind,src_ids,dst_ids,overlaps` (space-separated lists) and optionally a text table."""
    df = pd.DataFrame(
        [(e.kind, _ids(e.sources), _ids(e.targets), " ".join(f"{o:.6f}" for o in e.overlaps)) for e in report.events],
        columns=["kind", "src_ids", "dst_ids", "overlaps"],
    )
    df.to_csv(csv_path, index=False, lineterminator="\n")
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as f:
            console = Console(file=f, width=100, color_system=None)
            console.print(transition_title(report), soft_wrap=True, markup=False, highlight=False)
            console.print(transition_table(report))


def transition_title(report: TransitionReport) -> str:
    return f"Community transitions {report.label_from} -> {report.label_to}"


def transition_table(report: TransitionReport) -> Table:
    table = Table()
    for column in ("kind", "from", "to", "overlap"):
        table.add_column(column)
    for e in report.events:
        table.add_row(e.kind, _ids(e.sources) or "-", _ids(e.targets) or "-",
                      " ".join(f"{o:.2f}" for o in e.overlaps) or "-")
    return table


def partition_to_geojson(partition: CommunityPartition, grid: CoarseGrid) -> geojson.FeatureCollection:
    """One polygon feature per grid cell, properties node_id and community_id."""
    if len(partition.assignment) != grid.node_count:
        raise ValidationError("partition and grid disagree on node count")
    features = []
    for cell in grid.cells:
        ring = [list(p) for p in grid.cell_polygon(cell.node_id)]
        features.append(
            geojson.Feature(
                geometry=geojson.Polygon([ring]),
                id=cell.node_id,
                properties={
                    "node_id": cell.node_id,
                    "community_id": partition.assignment[cell.node_id],
                    "M": cell.log_intensity,
                },
            )
        )
    return geojson.FeatureCollection(features)


def write_geojson(partition: CommunityPartition, grid: CoarseGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        geojson.dump(partition_to_geojson(partition, grid), f, sort_keys=True)
