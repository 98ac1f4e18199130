"""Nightlight raster ingestion, yearly compositing and coarse-grid aggregation."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

BBox = Tuple[float, float, float, float]

ASCII_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")
AGGREGATION_MODES = ("sum", "mean")


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class RasterGrid:
    """Georeferenced matrix of per-pixel intensities. Row 0 is the northernmost row."""

    n_rows: int
    n_cols: int
    ll_corner: Tuple[float, float]
    cell_size: float
    nodata: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValidationError(f"raster must have at least one row and column, got {self.n_rows}x{self.n_cols}")
        if not self.cell_size > 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")
        if self.values.shape != (self.n_rows, self.n_cols):
            raise ValidationError(
                f"values shape {self.values.shape} does not match header {self.n_rows}x{self.n_cols}"
            )
        data = self.values[self.valid_mask]
        if data.size and data.min() < 0:
            raise ValidationError(f"negative intensity {data.min()} in raster")

    @property
    def valid_mask(self) -> np.ndarray:
        """Boolean mask of pixels that carry data."""
        return self.values != self.nodata

    @property
    def extent(self) -> BBox:
        """(min_lon, min_lat, max_lon, max_lat) of the raster."""
        lon0, lat0 = self.ll_corner
        return (lon0, lat0, lon0 + self.n_cols * self.cell_size, lat0 + self.n_rows * self.cell_size)

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Longitude and latitude of every pixel center, each shaped like values."""
        lon0, lat0 = self.ll_corner
        lons = lon0 + (np.arange(self.n_cols) + 0.5) * self.cell_size
        lats = lat0 + (self.n_rows - np.arange(self.n_rows) - 0.5) * self.cell_size
        return np.meshgrid(lons, lats)

    def same_georeference(self, other: "RasterGrid") -> bool:
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and self.ll_corner == other.ll_corner
            and self.cell_size == other.cell_size
        )


@dataclass(frozen=True)
class GridCell:
    node_id: int
    center: Tuple[float, float]
    total_intensity: float
    log_intensity: float


@dataclass(frozen=True)
class CoarseGrid:
    """The node lattice: one cell per network node, numbered row-major from the north-west corner."""

    grid_rows: int
    grid_cols: int
    bbox: BBox
    cells: Tuple[GridCell, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        ids = [c.node_id for c in self.cells]
        if sorted(ids) != list(range(self.grid_rows * self.grid_cols)):
            raise ValidationError("coarse grid node ids must be exactly 0..rows*cols-1")
        if any(c.log_intensity < 0 for c in self.cells):
            raise ValidationError("log intensity must be non-negative")

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def node_count(self) -> int:
        return len(self.cells)

    @property
    def cell_width(self) -> float:
        return (self.bbox[2] - self.bbox[0]) / self.grid_cols

    @property
    def cell_height(self) -> float:
        return (self.bbox[3] - self.bbox[1]) / self.grid_rows

    def centers(self) -> np.ndarray:
        """N x 2 array of (lon, lat) centers ordered by node_id."""
        return np.array([self.cells[i].center for i in range(len(self.cells))], dtype=float)

    def total_intensities(self) -> np.ndarray:
        return np.array([c.total_intensity for c in self.cells], dtype=float)

    def log_intensities(self) -> np.ndarray:
        return np.array([c.log_intensity for c in self.cells], dtype=float)

    def cell_polygon(self, node_id: int) -> List[Tuple[float, float]]:
        """Closed ring of (lon, lat) corners of a cell, counter-clockwise."""
        row, col = divmod(node_id, self.grid_cols)
        west = self.bbox[0] + col * self.cell_width
        north = self.bbox[3] - row * self.cell_height
        east, south = west + self.cell_width, north - self.cell_height
        return [(west, south), (east, south), (east, north), (west, north), (west, south)]


@dataclass(frozen=True)
class PointSamples:
    """Scattered intensity samples read from the point CSV format."""

    lon: np.ndarray
    lat: np.ndarray
    intensity: np.ndarray


def log_intensity(total: np.ndarray, log_base: float = math.e) -> np.ndarray:
    """M = log(I + 1), natural log unless another base is configured."""
    m = np.log1p(np.asarray(total, dtype=float))
    if log_base != math.e:
        m = m / math.log(log_base)
    return m


def load_ascii_grid(path) -> RasterGrid:
    """Load an ESRI ASCII grid.

    Args:
        path: Path to the .asc file

    Returns:
        RasterGrid with header fields and pixel values

    Raises:
        FileNotFoundError: If the file doesn't exist
        ParseError: If the header or a data row is malformed
        ValidationError: If a non-nodata pixel is negative
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Raster not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    header = {}
    for line_no, key in enumerate(ASCII_HEADER_KEYS, start=1):
        if line_no > len(lines):
            raise ParseError(path, line_no, f"missing header line '{key}'")
        parts = lines[line_no - 1].split()
        if len(parts) != 2 or parts[0].lower() != key.lower():
            raise ParseError(path, line_no, f"expected '{key} <value>', got '{lines[line_no - 1].strip()}'")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(path, line_no, f"non-numeric value for '{key}': {parts[1]}") from None

    n_cols, n_rows = header["ncols"], header["nrows"]
    if n_cols != int(n_cols) or n_rows != int(n_rows) or n_cols < 1 or n_rows < 1:
        raise ParseError(path, 1, f"ncols/nrows must be positive integers, got {n_cols}/{n_rows}")
    n_cols, n_rows = int(n_cols), int(n_rows)

    rows = []
    first_data = len(ASCII_HEADER_KEYS) + 1
    for line_no, line in enumerate(lines[first_data - 1:], start=first_data):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != n_cols:
            raise ParseError(path, line_no, f"expected {n_cols} values, found {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as e:
            raise ParseError(path, line_no, f"non-numeric pixel value ({e})") from None
    if len(rows) != n_rows:
        raise ParseError(path, None, f"expected {n_rows} data rows, found {len(rows)}")

    raster = RasterGrid(
        n_rows=n_rows,
        n_cols=n_cols,
        ll_corner=(header["xllcorner"], header["yllcorner"]),
        cell_size=header["cellsize"],
        nodata=header["NODATA_value"],
        values=np.array(rows, dtype=float),
    )
    logger.debug("Loaded %s: %dx%d pixels, %d nodata", path.name, n_rows, n_cols, int((~raster.valid_mask).sum()))
    return raster


def write_ascii_grid(raster: RasterGrid, path) -> None:
    """Write a raster in the ESRI ASCII grid layout read by load_ascii_grid."""
    path = Path(path)
    lines = [
        f"ncols {raster.n_cols}",
        f"nrows {raster.n_rows}",
        f"xllcorner {raster.ll_corner[0]!r}",
        f"yllcorner {raster.ll_corner[1]!r}",
        f"cellsize {raster.cell_size!r}",
        f"NODATA_value {raster.nodata!r}",
    ]
    for row in raster.values:
        lines.append(" ".join(f"{v:.10g}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_point_csv(path) -> PointSamples:
    """Load `lon,lat,intensity` samples.

    Raises:
        ParseError: If the header is missing a column or a value is non-numeric
        ValidationError: If an intensity is negative
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Point file not found: {path}")
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    missing = {"lon", "lat", "intensity"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"header is missing column(s) {sorted(missing)}")
    try:
        df = df[["lon", "lat", "intensity"]].astype(float)
    except ValueError as e:
        raise ParseError(path, None, f"non-numeric value ({e})") from None
    if (df["intensity"] < 0).any():
        raise ValidationError(f"{path}: negative intensity")
    return PointSamples(df["lon"].to_numpy(), df["lat"].to_numpy(), df["intensity"].to_numpy())


def average_rasters(rasters: Sequence[RasterGrid]) -> RasterGrid:
    """Composite rasters (e.g. monthly images) into their per-pixel mean.

    Nodata pixels are skipped; a pixel is nodata in the output only when it is
    nodata in every input.

    Raises:
        ValidationError: On an empty list or mismatched georeference
    """
    if not rasters:
        raise ValidationError("average_rasters needs at least one raster")
    first = rasters[0]
    for other in rasters[1:]:
        if not first.same_georeference(other):
            raise ValidationError("rasters differ in shape, corner or cell size")

    stack = np.stack([r.values for r in rasters])
    valid = np.stack([r.valid_mask for r in rasters])
    counts = valid.sum(axis=0)
    sums = np.where(valid, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
    values = np.where(counts > 0, mean, first.nodata)

    logger.info("Averaged %d raster(s); %d pixel(s) nodata in all inputs", len(rasters), int((counts == 0).sum()))
    return RasterGrid(first.n_rows, first.n_cols, first.ll_corner, first.cell_size, first.nodata, values)


def _bin_points(lon, lat, values, grid_rows, grid_cols, bbox, mode) -> Tuple[np.ndarray, np.ndarray]:
    min_lon, min_lat, max_lon, max_lat = bbox
    inside = (lon >= min_lon) & (lon <= max_lon) & (lat >= min_lat) & (lat <= max_lat)
    dlon = (max_lon - min_lon) / grid_cols
    dlat = (max_lat - min_lat) / grid_rows
    cols = np.minimum(np.floor((lon[inside] - min_lon) / dlon).astype(int), grid_cols - 1)
    rows = np.minimum(np.floor((max_lat - lat[inside]) / dlat).astype(int), grid_rows - 1)
    node = rows * grid_cols + cols

    n = grid_rows * grid_cols
    sums = np.bincount(node, weights=values[inside], minlength=n)
    counts = np.bincount(node, minlength=n)
    if mode == "mean":
        sums = np.divide(sums, counts, out=np.zeros(n), where=counts > 0)
    return sums, counts


def _check_grid_args(grid_rows, grid_cols, bbox, mode) -> None:
    if grid_rows < 1 or grid_cols < 1:
        raise ValidationError(f"grid_rows and grid_cols must be >= 1, got {grid_rows}x{grid_cols}")
    min_lon, min_lat, max_lon, max_lat = bbox
    if not (max_lon > min_lon and max_lat > min_lat):
        raise ValidationError(f"bbox must have positive width and height, got {bbox}")
    if mode not in AGGREGATION_MODES:
        raise ValidationError(f"aggregation mode must be one of {AGGREGATION_MODES}, got '{mode}'")


def _make_coarse_grid(intensity, grid_rows, grid_cols, bbox, log_base) -> CoarseGrid:
    min_lon, _, _, max_lat = bbox
    dlon = (bbox[2] - bbox[0]) / grid_cols
    dlat = (bbox[3] - bbox[1]) / grid_rows
    m = log_intensity(intensity, log_base)
    cells = []
    for node_id in range(grid_rows * grid_cols):
        row, col = divmod(node_id, grid_cols)
        center = (min_lon + (col + 0.5) * dlon, max_lat - (row + 0.5) * dlat)
        cells.append(GridCell(node_id, center, float(intensity[node_id]), float(m[node_id])))
    return CoarseGrid(grid_rows, grid_cols, tuple(bbox), tuple(cells))


def aggregate_to_grid(
    raster: RasterGrid,
    grid_rows: int,
    grid_cols: int,
    bbox: BBox,
    mode: str = "sum",
    log_base: float = math.e,
) -> CoarseGrid:
    """Aggregate raster pixels into a uniform grid_rows x grid_cols partition of bbox.

    Each pixel is assigned to the cell containing its center. A cell without
    pixels is a valid dark cell with I = 0.

    Args:
        raster: Source raster
        grid_rows: Number of lattice rows
        grid_cols: Number of lattice columns
        bbox: (min_lon, min_lat, max_lon, max_lat)
        mode: 'sum' (total intensity) or 'mean'
        log_base: Base of the logarithm in M = log(I + 1)

    Returns:
        CoarseGrid with per-cell I and M

    Raises:
        ValidationError: If bbox does not intersect the raster or arguments are invalid
    """
    _check_grid_args(grid_rows, grid_cols, bbox, mode)
    r_min_lon, r_min_lat, r_max_lon, r_max_lat = raster.extent
    if bbox[0] >= r_max_lon or bbox[2] <= r_min_lon or bbox[1] >= r_max_lat or bbox[3] <= r_min_lat:
        raise ValidationError(f"bbox {bbox} does not intersect raster extent {raster.extent}")

    lon, lat = raster.pixel_centers()
    valid = raster.valid_mask
    intensity, counts = _bin_points(lon[valid], lat[valid], raster.values[valid], grid_rows, grid_cols, bbox, mode)

    logger.info(
        "Aggregated %d pixel(s) into %dx%d grid (%d dark cell(s))",
        int(counts.sum()), grid_rows, grid_cols, int((intensity == 0).sum()),
    )
    return _make_coarse_grid(intensity, grid_rows, grid_cols, bbox, log_base)


def aggregate_points_to_grid(
    points: PointSamples,
    grid_rows: int,
    grid_cols: int,
    bbox: BBox,
    mode: str = "sum",
    log_base: float = math.e,
) -> CoarseGrid:
    """Aggregate point samples into the coarse lattice with the same binning rule as rasters."""
    _check_grid_args(grid_rows, grid_cols, bbox, mode)
    intensity, counts = _bin_points(points.lon, points.lat, points.intensity, grid_rows, grid_cols, bbox, mode)
    if counts.sum() == 0:
        raise ValidationError(f"no point samples fall inside bbox {bbox}")
    return _make_coarse_grid(intensity, grid_rows, grid_cols, bbox, log_base)


def write_node_table(grid: CoarseGrid, path) -> None:
    """Write the `node_id,lon,lat,I,M` node table."""
    df = pd.DataFrame(
        {
            "node_id": [c.node_id for c in grid.cells],
            "lon": [c.center[0] for c in grid.cells],
            "lat": [c.center[1] for c in grid.cells],
            "I": [c.total_intensity for c in grid.cells],
            "M": [c.log_intensity for c in grid.cells],
        }
    )
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_node_table(path, grid_rows: int, grid_cols: int, bbox: BBox) -> CoarseGrid:
    """Rebuild a CoarseGrid from a node table written by write_node_table."""
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"node_id", "lon", "lat", "I", "M"} - set(df.columns)
    if missing:
        raise ParseError(path, 1, f"node table is missing column(s) {sorted(missing)}")
    cells = [
        GridCell(int(r.node_id), (float(r.lon), float(r.lat)), float(r.I), float(r.M))
        for r in df.sort_values("node_id").itertuples(index=False)
    ]
    return CoarseGrid(grid_rows, grid_cols, tuple(bbox), tuple(cells))


def composite(paths: Sequence, grid_rows: int, grid_cols: int, bbox: BBox,
              mode: str = "sum", log_base: float = math.e) -> CoarseGrid:
    """Load one year's images and aggregate their average into the node lattice.

    Point CSV inputs (.csv) are aggregated directly; ASCII grids are averaged first.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValidationError("no raster inputs given")
    csvs = [p for p in paths if p.suffix.lower() == ".csv"]
    if csvs:
        if len(csvs) != len(paths) or len(csvs) > 1:
            raise ValidationError("point CSV input must be a single file and cannot be mixed with rasters")
        return aggregate_points_to_grid(load_point_csv(csvs[0]), grid_rows, grid_cols, bbox, mode, log_base)
    raster = average_rasters([load_ascii_grid(p) for p in paths])
    return aggregate_to_grid(raster, grid_rows, grid_cols, bbox, mode, log_base)
