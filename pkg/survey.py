"""Household survey ingestion, cluster binning and node matching."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ParseError, ValidationError
from feature_builder import FeatureMatrix
from grid_raster import CoarseGrid
from regress import Dataset

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SurveySample:
    lon: float
    lat: float
    consumption: float
    year: Optional[int] = None


@dataclass(frozen=True)
class SurveyLoad:
    samples: Tuple[SurveySample, ...]
    dropped: int


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    lon: float
    lat: float
    consumption: float
    members: int


@dataclass(frozen=True)
class JoinedSample:
    cluster_id: int
    node_id: int
    features: np.ndarray = field(repr=False)
    target: float


@dataclass(frozen=True)
class JoinResult:
    samples: Tuple[JoinedSample, ...]
    dropped: int


def load_survey_csv(path) -> SurveyLoad:
    """Read `lon,lat,consumption[,year]` rows.

    Rows with missing or negative consumption, or non-finite coordinates, are
    dropped and counted.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ParseError: If a required column is missing from the header
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Survey file not found: {path}")
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    missing = {"lon", "lat", "consumption"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"survey header is missing column(s) {sorted(missing)}")

    def numeric(column):
        return pd.to_numeric(df[column], errors="coerce").astype(float).to_numpy()

    lon, lat, consumption = numeric("lon"), numeric("lat"), numeric("consumption")
    year = numeric("year") if "year" in df.columns else None

    keep = np.isfinite(lon) & np.isfinite(lat) & np.isfinite(consumption) & (consumption >= 0)
    samples = tuple(
        SurveySample(
            float(lon[i]), float(lat[i]), float(consumption[i]),
            int(year[i]) if year is not None and np.isfinite(year[i]) else None,
        )
        for i in np.flatnonzero(keep)
    )
    dropped = len(df) - len(samples)
    logger.info("Loaded %d survey row(s) from %s, dropped %d", len(samples), path.name, dropped)
    return SurveyLoad(samples, dropped)


def bin_households(samples: Sequence[SurveySample], bin_precision: float = 0.001) -> List[Cluster]:
    """Merge households whose coordinates round to the same lattice point.

    Cluster consumption and coordinates are member means. Cluster ids follow the
    first appearance of each lattice point in the input.

    Raises:
        ValidationError: If bin_precision is not positive
    """
    if not bin_precision > 0:
        raise ValidationError(f"survey.bin_precision must be positive, got {bin_precision}")
    groups = defaultdict(list)
    for s in samples:
        key = (int(np.round(s.lon / bin_precision)), int(np.round(s.lat / bin_precision)))
        groups[key].append(s)

    clusters = []
    for cluster_id, members in enumerate(groups.values()):
        clusters.append(
            Cluster(
                cluster_id=cluster_id,
                lon=float(np.mean([m.lon for m in members])),
                lat=float(np.mean([m.lat for m in members])),
                consumption=float(np.mean([m.consumption for m in members])),
                members=len(members),
            )
        )
    logger.info("Binned %d household(s) into %d cluster(s)", len(samples), len(clusters))
    return clusters


def nearest_node(lon: float, lat: float, centers: np.ndarray, radius: float) -> Optional[int]:
    """Node minimizing Manhattan distance within radius; ties go to the lower node id."""
    d = np.abs(centers[:, 0] - lon) + np.abs(centers[:, 1] - lat)
    best = d.min()
    if best > radius:
        return None
    return int(np.flatnonzero(d <= best + TIE_TOLERANCE)[0])


def join_to_nodes(
    clusters: Sequence[Cluster],
    grid: CoarseGrid,
    features: FeatureMatrix,
    radius: float = 0.25,
) -> JoinResult:
    """Attach each cluster to its nearest node (Manhattan distance) within radius.

    Clusters without a node in range are dropped and counted.
    """
    if not radius > 0:
        raise ValidationError(f"survey.radius must be positive, got {radius}")
    if features.node_count != grid.node_count:
        raise ValidationError("feature matrix and grid disagree on node count")
    centers = grid.centers()
    joined = []
    for c in sorted(clusters, key=lambda c: c.cluster_id):
        node = nearest_node(c.lon, c.lat, centers, radius)
        if node is not None:
            joined.append(JoinedSample(c.cluster_id, node, features.row(node), c.consumption))
    dropped = len(clusters) - len(joined)
    logger.info("Joined %d cluster(s) to nodes within %g deg, dropped %d", len(joined), radius, dropped)
    return JoinResult(tuple(joined), dropped)


def write_joined(joined: Sequence[JoinedSample], columns: Sequence[str], path) -> None:
    """Write `cluster_id,node_id,target,step_1..step_L`."""
    df = pd.DataFrame(
        [s.features for s in joined], columns=list(columns)
    ) if joined else pd.DataFrame(columns=list(columns))
    df.insert(0, "target", [s.target for s in joined])
    df.insert(0, "node_id", [s.node_id for s in joined])
    df.insert(0, "cluster_id", [s.cluster_id for s in joined])
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_joined(path) -> Tuple[List[JoinedSample], List[str]]:
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"cluster_id", "node_id", "target"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"joined table is missing column(s) {sorted(missing)}")
    steps = [c for c in df.columns if c.startswith("step_")]
    feats = df[steps].to_numpy(dtype=float)
    samples = [
        JoinedSample(int(cid), int(nid), feats[i].copy(), float(t))
        for i, (cid, nid, t) in enumerate(zip(df["cluster_id"], df["node_id"], df["target"]))
    ]
    return samples, steps


def to_dataset(joined: Sequence[JoinedSample], log_target: bool = False) -> Dataset:
    """Regression dataset from joined samples; log_target applies log(1 + y)."""
    if not joined:
        raise ValidationError("no survey clusters could be joined to grid nodes")
    X = np.vstack([s.features for s in joined])
    y = np.array([s.target for s in joined], dtype=float)
    if log_target:
        y = np.log1p(y)
    return Dataset(
        X=X,
        y=y,
        ids=np.array([s.cluster_id for s in joined], dtype=np.int64),
        node_ids=np.array([s.node_id for s in joined], dtype=np.int64),
    )
