import numpy as np
import pandas as pd
import pytest

from config import load_config
from errors import ValidationError
from grid_raster import aggregate_to_grid, load_ascii_grid
from synthetic import BBOX, GRID_SHAPE, SITES, generate_synthetic


def test_unknown_scenario(tmp_path):
    with pytest.raises(ValidationError, match="two-blobs"):
        generate_synthetic("three-blobs", 1, tmp_path)


def test_noise_fraction_range(tmp_path):
    with pytest.raises(ValidationError):
        generate_synthetic("planted-linear", 1, tmp_path, noise_fraction=1.0)


def test_two_blobs_leaves_a_dark_gap(tmp_path):
    result = generate_synthetic("two-blobs", 3, tmp_path)
    grid = aggregate_to_grid(load_ascii_grid(result.rasters[0]), *GRID_SHAPE, BBOX)
    m = grid.log_intensities().reshape(GRID_SHAPE)
    # cell columns 8..11 span lon 34..36, between the blobs
    assert (m[:, 8:12] == 0).all()
    assert m[9, 4] > 0 and m[9, 15] > 0
    config = load_config(result.config)
    assert config.seed == 3
    assert config.inputs.rasters == (result.rasters[0].resolve(),)


def test_growth_merge_lights_the_band(tmp_path):
    result = generate_synthetic("growth-merge", 3, tmp_path)
    before, after = (
        aggregate_to_grid(load_ascii_grid(p), *GRID_SHAPE, BBOX).log_intensities().reshape(GRID_SHAPE)
        for p in result.rasters
    )
    assert (before[9:11, 8:12] == 0).all()
    assert (after[9:11, 8:12] > 0).all()
    assert (after >= before).all()
    config = load_config(result.config)
    assert [label for label, _ in config.inputs.snapshots] == ["2013", "2014"]
    assert config.inputs.rasters == ()


def test_planted_linear_survey(tmp_path):
    result = generate_synthetic("planted-linear", 5, tmp_path)
    survey = pd.read_csv(result.survey)
    assert list(survey.columns) == ["lon", "lat", "consumption", "year"]
    assert SITES <= len(survey) <= 3 * SITES
    assert (survey["consumption"] >= 0).all()
    assert survey["lon"].between(BBOX[0], BBOX[2]).all()
    config = load_config(result.config)
    assert config.features.include_origin
    assert config.inputs.survey == result.survey.resolve()


def test_noiseless_sites_sit_on_the_planted_line(tmp_path):
    result = generate_synthetic("planted-linear", 5, tmp_path, noise_fraction=0.0)
    grid = aggregate_to_grid(load_ascii_grid(result.rasters[0]), *GRID_SHAPE, BBOX)
    survey = pd.read_csv(result.survey)
    sites = survey.groupby(["lon", "lat"])["consumption"].mean()
    centers = grid.centers()
    m = grid.log_intensities()
    for (lon, lat), value in sites.items():
        node = int(np.argmin(np.abs(centers[:, 0] - lon) + np.abs(centers[:, 1] - lat)))
        assert value == pytest.approx(100.0 + 25.0 * m[node], rel=1e-9)


def test_same_seed_same_files(tmp_path):
    a = generate_synthetic("planted-linear", 9, tmp_path / "a")
    b = generate_synthetic("planted-linear", 9, tmp_path / "b")
    assert a.rasters[0].read_bytes() == b.rasters[0].read_bytes()
    assert a.survey.read_bytes() == b.survey.read_bytes()
    c = generate_synthetic("planted-linear", 10, tmp_path / "c")
    assert a.survey.read_bytes() != c.survey.read_bytes()
