"""Intensity walks and per-node step-expectation features."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from errors import ParseError, ValidationError
from grid_raster import CoarseGrid
from walk_engine import WalkSet

logger = logging.getLogger(__name__)

INTENSITY_KINDS = ("log", "raw")


@dataclass(frozen=True)
class FeatureMatrix:
    """values[k, i-1] is the expected intensity at step i of walks from node k.

    With include_origin the first column holds the origin intensity and is named step_0.
    """

    values: np.ndarray = field(repr=False)
    include_origin: bool = False

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def columns(self) -> Tuple[str, ...]:
        start = 0 if self.include_origin else 1
        return tuple(f"step_{i}" for i in range(start, start + self.values.shape[1]))

    def row(self, node_id: int) -> np.ndarray:
        return self.values[node_id]


def node_intensities(grid: CoarseGrid, intensity: str = "log") -> np.ndarray:
    """Per-node value substituted into walks: M by default, raw I on request."""
    if intensity not in INTENSITY_KINDS:
        raise ValidationError(f"features.intensity must be one of {INTENSITY_KINDS}, got '{intensity}'")
    return grid.log_intensities() if intensity == "log" else grid.total_intensities()


def intensity_walks(walks: WalkSet, grid: CoarseGrid, intensity: str = "log") -> np.ndarray:
    """Replace every node id in the walks by that node's intensity.

    Returns:
        Array shaped like walks.walks

    Raises:
        ValidationError: If a walk visits a node missing from the grid
    """
    values = node_intensities(grid, intensity)
    ids = walks.walks
    if ids.size and (ids.min() < 0 or ids.max() >= values.size):
        raise ValidationError(f"walks reference node ids outside 0..{values.size - 1}")
    return values[ids]


def step_expectation_features(
    walks: WalkSet,
    grid: CoarseGrid,
    intensity: str = "log",
    include_origin: bool = False,
) -> FeatureMatrix:
    """Mean intensity at each step 1..L over the walks from each node.

    Args:
        walks: Simulated walks
        grid: Coarse grid supplying intensities
        intensity: 'log' for M, 'raw' for I
        include_origin: Prepend the origin intensity as an extra column

    Returns:
        FeatureMatrix with one row per node
    """
    if walks.node_count != grid.node_count:
        raise ValidationError(f"walks cover {walks.node_count} nodes but the grid has {grid.node_count}")
    traces = intensity_walks(walks, grid, intensity)
    start = 0 if include_origin else 1
    values = traces[:, :, start:].mean(axis=1)
    logger.info("Built %d x %d feature matrix (%s intensity)", values.shape[0], values.shape[1], intensity)
    return FeatureMatrix(np.ascontiguousarray(values), include_origin)


def write_features(features: FeatureMatrix, path) -> None:
    """Write `node_id,step_1,...,step_L`."""
    df = pd.DataFrame(features.values, columns=list(features.columns))
    df.insert(0, "node_id", np.arange(features.node_count))
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    if "node_id" not in df.columns or not any(c.startswith("step_") for c in df.columns):
        raise ParseError(path, 1, "feature table needs node_id and step_* columns")
    df = df.sort_values("node_id")
    if df["node_id"].tolist() != list(range(len(df))):
        raise ParseError(path, None, "node ids must be exactly 0..N-1")
    steps = [c for c in df.columns if c.startswith("step_")]
    return FeatureMatrix(df[steps].to_numpy(dtype=float).copy(), include_origin=steps[0] == "step_0")
