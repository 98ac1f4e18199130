import math

import pytest
import yaml

from config import (
    DEFAULTS,
    PRESETS,
    deep_merge,
    dump_settings,
    load_config,
    parse_override,
    preset_settings,
    resolve_settings,
)
from errors import ValidationError


def _write(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_preset_then_file_then_flags(tmp_path):
    path = _write(tmp_path / "config.yaml", {
        "preset": "tanzania",
        "seed": 3,
        "gravity": {"tau": 7.5},
        "walk": {"length": 8},
    })
    config = load_config(path, overrides=["walk.length=4", "regression.models=[linear]"], seed=11)
    assert config.seed == 11
    assert config.walk.seed == 11
    assert config.gravity.tau == 7.5
    assert config.gravity.k_rewire == 3
    assert config.walk.length == 4
    assert (config.grid.rows, config.grid.cols) == (50, 51)
    assert [m.name for m in config.regression.models] == ["linear"]
    assert config.output_dir == tmp_path.resolve() / "output"


def test_inputs_resolve_against_config_directory(tmp_path):
    path = _write(tmp_path / "config.yaml", {
        "preset": "synthetic",
        "seed": 1,
        "inputs": {"rasters": ["a.asc"], "survey": "s.csv", "snapshots": {2014: ["b.asc"], 2013: ["c.asc"]}},
    })
    config = load_config(path)
    assert config.inputs.rasters == (tmp_path.resolve() / "a.asc",)
    assert config.inputs.survey == tmp_path.resolve() / "s.csv"
    assert [year for year, _ in config.inputs.snapshots] == ["2013", "2014"]
    assert config.inputs.snapshots[0][1] == (tmp_path.resolve() / "c.asc",)


def test_output_dir_flag(tmp_path):
    config = load_config(preset="synthetic", seed=0, output_dir=str(tmp_path / "out"))
    assert config.output_dir == (tmp_path / "out").resolve()


def test_seed_is_required():
    with pytest.raises(ValidationError, match="seed"):
        load_config(preset="synthetic")


def test_invalid_values_are_named():
    with pytest.raises(ValidationError, match="tau"):
        load_config(preset="synthetic", seed=0, overrides=["gravity.tau=-1"])
    with pytest.raises(ValidationError, match="walk.length"):
        load_config(preset="synthetic", seed=0, overrides=["walk.length=2.5"])
    with pytest.raises(ValidationError, match="k_rewire"):
        load_config(seed=0, overrides=["grid.rows=1", "grid.cols=3", "grid.bbox=[0,0,1,1]"])
    with pytest.raises(ValidationError, match="restarts"):
        load_config(preset="synthetic", seed=0, overrides=["community.restarts=0"])
    with pytest.raises(ValidationError, match="svm"):
        load_config(preset="synthetic", seed=0, overrides=["regression.models=[svm]"])


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ValidationError, match="gravity.beta"):
        load_config(preset="synthetic", seed=0, overrides=["gravity.beta=1"])
    path = _write(tmp_path / "config.yaml", {"seed": 1, "colour": "red"})
    with pytest.raises(ValidationError, match="colour"):
        load_config(path)


def test_unknown_preset():
    with pytest.raises(ValidationError, match="preset"):
        resolve_settings({"preset": "kenya"})


def test_malawi_needs_grid_size():
    with pytest.raises(ValidationError, match="grid.rows"):
        load_config(preset="malawi", seed=0)
    config = load_config(preset="malawi", seed=0, overrides=["grid.rows=30", "grid.cols=12"])
    assert (config.gravity.tau, config.gravity.k_rewire) == (2.0, 1)


def test_presets_only_touch_known_keys():
    for name, preset in PRESETS.items():
        deep_merge(DEFAULTS, preset)
        assert preset_settings(name)["preset"] == name


def test_parse_override():
    assert parse_override("walk.q=0.25") == {"walk": {"q": 0.25}}
    assert parse_override("grid.bbox=[1, 2, 3, 4]") == {"grid": {"bbox": [1, 2, 3, 4]}}
    assert parse_override("features.include_origin=true") == {"features": {"include_origin": True}}
    with pytest.raises(ValidationError):
        parse_override("walk.q")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.yaml")


def test_bad_yaml(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("seed: [1\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(path)


def test_log_base_and_defaults():
    config = load_config(preset="synthetic", seed=5)
    assert config.grid.log_base == math.e
    assert config.walk.p == 1.0 and config.walk.q == 0.5
    assert config.survey.radius == 0.25
    assert config.regression.n_splits == 100 and config.regression.train_frac == 0.5
    assert config.community.overlap_threshold == 0.3
    assert config.community.restarts == 10
    assert load_config(preset="synthetic", seed=5, overrides=["grid.log_base=10"]).grid.log_base == 10.0


def test_dumped_preset_loads_back(tmp_path):
    path = tmp_path / "config.yaml"
    dump_settings(preset_settings("tanzania"), path)
    config = load_config(path, seed=2)
    assert config.preset == "tanzania"
    assert config.grid.bbox == (29.3, -11.75, 40.45, -0.95)
