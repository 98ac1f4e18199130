import json

import pytest

import pipeline
from config import load_config
from errors import StageError, ValidationError
from synthetic import generate_synthetic

FAST = ["walk.walks_per_node=20", "walk.length=10", "regression.n_splits=20"]


def _setup(tmp_path, scenario, *overrides, seed=7, noise=0.3, out="output"):
    result = generate_synthetic(scenario, seed, tmp_path / "data", noise)
    config = load_config(result.config, overrides=[*FAST, *overrides], output_dir=str(tmp_path / out))
    return result, config


def test_two_blobs_run_writes_artifacts(tmp_path):
    _, config = _setup(tmp_path, "two-blobs")
    report = pipeline.run_pipeline(config)
    out = config.output_dir
    for name in ("config.resolved.yaml", "nodes.csv", "edges.tsv", "features.csv", "partition_main.csv",
                 "communities_main.geojson", "summary.json", "summary.txt"):
        assert (out / name).exists(), name
    assert not (out / "walks.txt").exists()
    assert not list(out.glob("*.partial"))
    assert report.summary["nodes"] == 400
    assert report.summary["communities"]["main"] >= 2
    assert "median_test_r2" not in report.summary

    lines = (out / "summary.json").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0]) == json.loads(pipeline.summary_json(report.summary))


def test_growth_merge_reduces_communities(tmp_path):
    _, config = _setup(tmp_path, "growth-merge")
    report = pipeline.run_pipeline(config)
    counts = report.summary["communities"]
    assert counts["2014"] < counts["2013"]
    assert report.summary["transitions"]["2013->2014"]["merge"] >= 1
    assert (config.output_dir / "transitions_2013_2014.csv").exists()
    assert (config.output_dir / "transitions_2013_2014.txt").exists()
    assert not (config.output_dir / "nodes.csv").exists()


def test_noiseless_planted_signal_is_recovered(tmp_path):
    _, config = _setup(tmp_path, "planted-linear", "regression.models=[linear]", noise=0.0)
    report = pipeline.run_pipeline(config)
    assert report.fits["linear"].median_test_r2 == pytest.approx(1.0, abs=1e-6)
    assert report.summary["joined_clusters"] >= 500
    assert report.summary["join_dropped"] == 0


def test_noisy_planted_signal(tmp_path):
    _, config = _setup(tmp_path, "planted-linear", "regression.models=[linear, bayesian_ridge]")
    report = pipeline.run_pipeline(config)
    assert report.summary["median_test_r2"]["linear"] >= 0.5
    assert report.summary["median_test_r2"]["bayesian_ridge"] >= 0.5
    for name in ("joined.csv", "fit_linear.csv", "predictions_linear.csv", "fit_bayesian_ridge.csv"):
        assert (config.output_dir / name).exists(), name


@pytest.mark.slow
def test_planted_linear_at_full_size(tmp_path):
    result = generate_synthetic("planted-linear", 7, tmp_path / "data")
    config = load_config(result.config, overrides=["regression.models=[linear]"], output_dir=str(tmp_path / "out"))
    assert (config.walk.walks_per_node, config.walk.length, config.regression.n_splits) == (100, 20, 100)
    report = pipeline.run_pipeline(config)
    fit = report.fits["linear"]
    assert len(fit.test_r2) == 100
    assert fit.median_test_r2 >= 0.5
    assert report.summary["median_test_r2"]["linear"] == fit.median_test_r2


def test_runs_are_deterministic_across_workers(tmp_path):
    _, serial = _setup(tmp_path, "planted-linear", "regression.models=[linear, knn]", out="serial")
    parallel = load_config(
        tmp_path / "data" / "config.yaml",
        overrides=[*FAST, "regression.models=[linear, knn]", "walk.workers=4", "regression.workers=4"],
        output_dir=str(tmp_path / "parallel"),
    )
    pipeline.run_pipeline(serial)
    pipeline.run_pipeline(parallel)
    for name in ("summary.json", "features.csv", "joined.csv", "fit_knn.csv", "partition_main.csv"):
        assert (serial.output_dir / name).read_bytes() == (parallel.output_dir / name).read_bytes(), name


def test_stages_run_one_by_one_match_full_run(tmp_path):
    _, config = _setup(tmp_path, "two-blobs", out="full")
    pipeline.run_pipeline(config)
    staged = load_config(tmp_path / "data" / "config.yaml", overrides=FAST, output_dir=str(tmp_path / "staged"))
    for name in ("ingest", "build-net", "walk", "features", "communities"):
        entries = pipeline.run_stage(staged, name)
        assert "seed" not in entries
    assert (staged.output_dir / "walks.txt").read_text().startswith("#params p=1.0 q=0.5 L=10 n=20 seed=7")
    for name in ("nodes.csv", "edges.tsv", "features.csv", "partition_main.csv"):
        assert (staged.output_dir / name).read_bytes() == (config.output_dir / name).read_bytes(), name


def test_stage_without_prerequisites(tmp_path):
    _, config = _setup(tmp_path, "two-blobs")
    with pytest.raises(StageError) as err:
        pipeline.run_stage(config, "features")
    assert err.value.stage == "features"
    assert err.value.is_validation
    assert "walk" in str(err.value)


def test_failed_stage_keeps_partial_output(tmp_path):
    result, config = _setup(tmp_path, "planted-linear")
    result.survey.write_text("lon,lat,spend\n30.0,-5.0,1.0\n", encoding="utf-8")
    with pytest.raises(StageError) as err:
        pipeline.run_pipeline(config)
    assert err.value.stage == "join"
    assert err.value.is_validation
    assert (config.output_dir / "features.csv").exists()
    assert not (config.output_dir / "joined.csv").exists()
    assert not (config.output_dir / "summary.json").exists()

    runner = pipeline.Pipeline(config)
    with pytest.raises(RuntimeError):
        with runner.staged("half.csv") as path:
            path.write_text("node_id\n", encoding="utf-8")
            raise RuntimeError("interrupted")
    assert (config.output_dir / "half.csv.partial").exists()
    assert not (config.output_dir / "half.csv").exists()


def test_missing_input_is_a_validation_error(tmp_path):
    result, config = _setup(tmp_path, "two-blobs")
    result.rasters[0].unlink()
    with pytest.raises(ValidationError, match="two_blobs.asc"):
        pipeline.run_pipeline(config)
    assert not config.output_dir.exists()


def test_unknown_stage(tmp_path):
    _, config = _setup(tmp_path, "two-blobs")
    with pytest.raises(ValidationError):
        pipeline.run_stage(config, "plot")


def test_transfer_between_joined_tables(tmp_path):
    _, config = _setup(tmp_path, "planted-linear", "regression.models=[linear]", noise=0.0)
    pipeline.run_pipeline(config)
    joined = config.output_dir / "joined.csv"
    reports = pipeline.run_transfer(config, joined, joined)
    assert [r.model for r in reports] == ["linear"]
    assert reports[0].test_r2 == pytest.approx(1.0, abs=1e-6)
    assert (config.output_dir / "transfer_linear.csv").exists()
    assert [r.model for r in pipeline.run_transfer(config, joined, joined, model="knn")] == ["knn"]
