"""Seeded synthetic rasters and surveys standing in for nightlight composites and household data."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

import config as config_module
from errors import ValidationError
from grid_raster import RasterGrid, aggregate_to_grid, load_ascii_grid, write_ascii_grid

logger = logging.getLogger(__name__)

BBOX = (30.0, -10.0, 40.0, 0.0)
PIXEL_SIZE = 0.05
GRID_SHAPE = (20, 20)
NODATA = -9999.0
DARK_CUTOFF = 0.01

# planted consumption model: a + b * M
INTERCEPT = 100.0
SLOPE = 25.0
SITES = 600
SITE_JITTER = 0.1


@dataclass(frozen=True)
class SyntheticOutput:
    """Files written for one scenario."""

    scenario: str
    rasters: Tuple[Path, ...]
    survey: Path = None
    config: Path = None


def _pixel_centers() -> Tuple[np.ndarray, np.ndarray]:
    n_cols = int(round((BBOX[2] - BBOX[0]) / PIXEL_SIZE))
    n_rows = int(round((BBOX[3] - BBOX[1]) / PIXEL_SIZE))
    lons = BBOX[0] + (np.arange(n_cols) + 0.5) * PIXEL_SIZE
    lats = BBOX[3] - (np.arange(n_rows) + 0.5) * PIXEL_SIZE
    return np.meshgrid(lons, lats)


def _raster(values: np.ndarray) -> RasterGrid:
    n_rows, n_cols = values.shape
    return RasterGrid(n_rows, n_cols, (BBOX[0], BBOX[1]), PIXEL_SIZE, NODATA, values)


def _blob(lon, lat, center, amplitude, sigma) -> np.ndarray:
    d2 = (lon - center[0]) ** 2 + (lat - center[1]) ** 2
    return amplitude * np.exp(-d2 / (2 * sigma ** 2))


def _two_blob_field(lon, lat) -> np.ndarray:
    field = _blob(lon, lat, (32.0, -5.0), 10.0, 0.5) + _blob(lon, lat, (38.0, -5.0), 10.0, 0.5)
    return np.where(field < DARK_CUTOFF, 0.0, field)


def _band(lon, lat) -> np.ndarray:
    """Light filling the dark gap between the blobs (two full cell rows)."""
    inside = (lon > 32.0) & (lon < 38.0) & (lat > -5.5) & (lat < -4.5)
    return np.where(inside, 10.0, 0.0)


def _scenario_config(seed: int, inputs: Dict, features: Dict = None) -> Dict:
    settings = {"preset": "synthetic", "seed": seed, "output_dir": "output", "inputs": inputs}
    if features:
        settings["features"] = features
    return settings


def two_blobs(seed: int, out_dir: Path, rng: np.random.Generator) -> SyntheticOutput:
    lon, lat = _pixel_centers()
    path = out_dir / "two_blobs.asc"
    write_ascii_grid(_raster(_two_blob_field(lon, lat)), path)
    cfg = out_dir / "config.yaml"
    config_module.dump_settings(_scenario_config(seed, {"rasters": [path.name]}), cfg)
    return SyntheticOutput("two-blobs", (path,), None, cfg)


def growth_merge(seed: int, out_dir: Path, rng: np.random.Generator) -> SyntheticOutput:
    lon, lat = _pixel_centers()
    before = _two_blob_field(lon, lat)
    after = before + _band(lon, lat)
    paths = (out_dir / "growth_2013.asc", out_dir / "growth_2014.asc")
    write_ascii_grid(_raster(before), paths[0])
    write_ascii_grid(_raster(after), paths[1])
    cfg = out_dir / "config.yaml"
    inputs = {"snapshots": {"2013": [paths[0].name], "2014": [paths[1].name]}}
    config_module.dump_settings(_scenario_config(seed, inputs), cfg)
    return SyntheticOutput("growth-merge", paths, None, cfg)


def planted_linear(seed: int, out_dir: Path, rng: np.random.Generator, noise_fraction: float = 0.3) -> SyntheticOutput:
    """Lit field with random blobs and a survey whose cluster means are affine in the node's M.

    noise_fraction is the share of cluster-consumption variance left unexplained
    by the planted signal; 0 makes consumption exactly a + b * M.
    """
    if not 0 <= noise_fraction < 1:
        raise ValidationError(f"noise_fraction must be in [0, 1), got {noise_fraction}")
    lon, lat = _pixel_centers()
    field = 0.2 + 0.1 * rng.random(lon.shape)
    for _ in range(6):
        center = (rng.uniform(BBOX[0] + 1, BBOX[2] - 1), rng.uniform(BBOX[1] + 1, BBOX[3] - 1))
        field = field + _blob(lon, lat, center, rng.uniform(10.0, 30.0), rng.uniform(0.5, 1.0))
    raster = _raster(field)
    raster_path = out_dir / "planted.asc"
    write_ascii_grid(raster, raster_path)

    # the pipeline rereads the rounded file, so M comes from the written raster's grid
    grid = aggregate_to_grid(load_ascii_grid(raster_path), GRID_SHAPE[0], GRID_SHAPE[1], BBOX)
    centers = grid.centers()
    m = grid.log_intensities()

    nodes = rng.integers(0, grid.node_count, SITES)
    signal = INTERCEPT + SLOPE * m[nodes]
    noise_sd = np.sqrt(noise_fraction / (1 - noise_fraction) * signal.var()) if noise_fraction > 0 else 0.0
    site_value = np.maximum(signal + rng.normal(0.0, 1.0, SITES) * noise_sd, 0.0)
    site_lon = centers[nodes, 0] + rng.uniform(-SITE_JITTER, SITE_JITTER, SITES)
    site_lat = centers[nodes, 1] + rng.uniform(-SITE_JITTER, SITE_JITTER, SITES)

    rows: List[Tuple[float, float, float, int]] = []
    for s in range(SITES):
        households = int(rng.integers(1, 4))
        spread = rng.normal(0.0, 0.02 * site_value[s], households)
        spread -= spread.mean()
        for value in site_value[s] + spread:
            rows.append((site_lon[s], site_lat[s], float(value), 2013))
    survey_path = out_dir / "survey.csv"
    pd.DataFrame(rows, columns=["lon", "lat", "consumption", "year"]).to_csv(
        survey_path, index=False, float_format="%.17g", lineterminator="\n"
    )

    cfg = out_dir / "config.yaml"
    inputs = {"rasters": [raster_path.name], "survey": survey_path.name}
    config_module.dump_settings(
        _scenario_config(seed, inputs, {"include_origin": True}), cfg
    )
    logger.info("Planted %d household(s) at %d site(s), noise fraction %g", len(rows), SITES, noise_fraction)
    return SyntheticOutput("planted-linear", (raster_path,), survey_path, cfg)


SCENARIOS: Dict[str, Callable[..., SyntheticOutput]] = {
    "two-blobs": two_blobs,
    "growth-merge": growth_merge,
    "planted-linear": planted_linear,
}


def generate_synthetic(scenario: str, seed: int, out_dir, noise_fraction: float = 0.3) -> SyntheticOutput:
    """Write a scenario's rasters, survey (planted-linear only) and a ready-to-run config.yaml.

    Args:
        scenario: One of SCENARIOS
        seed: Seed for every random draw
        out_dir: Directory to write into (created if missing)
        noise_fraction: Unexplained variance share for planted-linear

    Raises:
        ValidationError: On an unknown scenario name
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario '{scenario}'; valid: {', '.join(sorted(SCENARIOS))}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    if scenario == "planted-linear":
        result = planted_linear(seed, out_dir, rng, noise_fraction)
    else:
        result = SCENARIOS[scenario](seed, out_dir, rng)
    logger.info("Generated scenario %s in %s", scenario, out_dir)
    return result
