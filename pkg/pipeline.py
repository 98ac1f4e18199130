"""Stage orchestration: rasters to network, walks, features, survey fits and community tracking.

Each stage writes its artifacts into the configured output directory through a
`.partial` file that is renamed once complete, so a failed stage leaves its
partial output behind. Stages run standalone too: a missing prerequisite is
read back from the output directory.
"""

import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.table import Table

from communities import (
    CommunityPartition,
    TransitionReport,
    detect_communities,
    read_partition,
    track_communities,
    write_geojson,
    write_partition,
    write_transitions,
)
from config import PipelineConfig, dump_settings
from errors import StageError, ValidationError
from feature_builder import FeatureMatrix, read_features, step_expectation_features, write_features
from gravity_graph import GravityNetwork, build_gravity_network, edge_summary, read_edge_list, write_edge_list
from grid_raster import CoarseGrid, composite, read_node_table, write_node_table
from regress import FitReport, ModelSpec, TransferReport, split_harness, transfer_fit, write_fit_report, write_predictions
from survey import JoinedSample, bin_households, join_to_nodes, load_survey_csv, read_joined, to_dataset, write_joined
from walk_engine import WalkSet, read_walks, simulate_walks, write_walks

logger = logging.getLogger(__name__)

STAGES = ("ingest", "build-net", "walk", "features", "join", "fit", "communities", "track")
MAIN_LABEL = "main"


@dataclass
class RunReport:
    """What a run produced: the summary record plus the in-memory results behind it."""

    summary: Dict[str, Any]
    artifacts: List[Path] = field(default_factory=list)
    fits: Dict[str, FitReport] = field(default_factory=dict)
    partitions: Dict[str, CommunityPartition] = field(default_factory=dict)
    transitions: List[TransitionReport] = field(default_factory=list)


def stage(name: str):
    """Log a stage and wrap any failure in StageError carrying the stage name."""

    def decorate(method):
        @wraps(method)
        def run(self, *args, **kwargs):
            logger.info("Stage %s", name)
            try:
                return method(self, *args, **kwargs)
            except StageError:
                raise
            except Exception as e:
                logger.debug("Stage %s failed", name, exc_info=True)
                raise StageError(name, e) from e

        return run

    return decorate


class Pipeline:
    """Runs the stages of one configuration against its output directory."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.summary: Dict[str, Any] = {"seed": config.seed}
        self.artifacts: List[Path] = []
        self.fits: Dict[str, FitReport] = {}
        self.partitions: Dict[str, CommunityPartition] = {}
        self.transitions: List[TransitionReport] = []
        self._grid: Optional[CoarseGrid] = None
        self._network: Optional[GravityNetwork] = None
        self._walks: Optional[WalkSet] = None
        self._features: Optional[FeatureMatrix] = None
        self._joined: Optional[List[JoinedSample]] = None

    # -- plumbing -------------------------------------------------------

    def check_inputs(self) -> None:
        """Raise ValidationError naming every configured input file that does not exist."""
        inputs = self.config.inputs
        named = list(inputs.rasters) + [p for _, paths in inputs.snapshots for p in paths]
        if inputs.survey is not None:
            named.append(inputs.survey)
        missing = [str(p) for p in named if not Path(p).exists()]
        if missing:
            raise ValidationError(f"input file(s) not found: {', '.join(missing)}")
        if not inputs.rasters and not inputs.snapshots:
            raise ValidationError("config names no rasters and no snapshots (inputs.rasters / inputs.snapshots)")
        if inputs.survey is not None and not inputs.rasters:
            raise ValidationError("inputs.survey needs inputs.rasters to build features")

    @contextmanager
    def staged(self, *names: str):
        """Yield `.partial` paths and rename them into place when the block succeeds."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        finals = [self.output_dir / name for name in names]
        partials = [p.with_name(p.name + ".partial") for p in finals]
        yield partials if len(partials) > 1 else partials[0]
        for partial, final in zip(partials, finals):
            os.replace(partial, final)
            self.artifacts.append(final)
            logger.debug("Wrote %s", final)

    def _existing(self, name: str, producer: str) -> Path:
        path = self.output_dir / name
        if not path.exists():
            raise ValidationError(f"{path} not found; run the '{producer}' stage first")
        return path

    def _grid_settings(self):
        g = self.config.grid
        return g.rows, g.cols, g.bbox

    @property
    def grid(self) -> CoarseGrid:
        if self._grid is None:
            self._grid = read_node_table(self._existing("nodes.csv", "ingest"), *self._grid_settings())
        return self._grid

    @property
    def network(self) -> GravityNetwork:
        if self._network is None:
            self._network = read_edge_list(self._existing("edges.tsv", "build-net"), self.grid)
        return self._network

    @property
    def walks(self) -> WalkSet:
        if self._walks is None:
            self._walks = read_walks(self._existing("walks.txt", "walk"))
        return self._walks

    @property
    def features(self) -> FeatureMatrix:
        if self._features is None:
            self._features = read_features(self._existing("features.csv", "features"))
        return self._features

    @property
    def joined(self) -> List[JoinedSample]:
        if self._joined is None:
            self._joined, _ = read_joined(self._existing("joined.csv", "join"))
        return self._joined

    def _composite(self, paths: Sequence[Path]) -> CoarseGrid:
        g = self.config.grid
        return composite(paths, g.rows, g.cols, g.bbox, g.aggregation, g.log_base)

    # -- stages ---------------------------------------------------------

    @stage("ingest")
    def ingest(self) -> CoarseGrid:
        if not self.config.inputs.rasters:
            raise ValidationError("inputs.rasters is empty")
        self._grid = self._composite(self.config.inputs.rasters)
        with self.staged("nodes.csv") as path:
            write_node_table(self._grid, path)
        self.summary["nodes"] = self._grid.node_count
        self.summary["dark_nodes"] = int((self._grid.total_intensities() == 0).sum())
        return self._grid

    @stage("build-net")
    def build_net(self) -> GravityNetwork:
        self._network = build_gravity_network(self.grid, self.config.gravity)
        with self.staged("edges.tsv") as path:
            write_edge_list(self._network, path)
        self.summary.update(edge_summary(self._network))
        return self._network

    @stage("walk")
    def walk(self, dump: Optional[bool] = None) -> WalkSet:
        """Simulate walks; they are written to walks.txt when dump (default walk.dump) is set."""
        self._walks = simulate_walks(self.network, self.config.walk)
        if dump is None:
            dump = self.config.dump_walks
        if dump:
            with self.staged("walks.txt") as path:
                write_walks(self._walks, path)
        self.summary["walks"] = self._walks.node_count * self._walks.walks_per_node
        return self._walks

    @stage("features")
    def build_features(self) -> FeatureMatrix:
        f = self.config.features
        self._features = step_expectation_features(self.walks, self.grid, f.intensity, f.include_origin)
        with self.staged("features.csv") as path:
            write_features(self._features, path)
        self.summary["feature_columns"] = len(self._features.columns)
        return self._features

    @stage("join")
    def join(self) -> List[JoinedSample]:
        if self.config.inputs.survey is None:
            raise ValidationError("inputs.survey is not set")
        s = self.config.survey
        loaded = load_survey_csv(self.config.inputs.survey)
        clusters = bin_households(loaded.samples, s.bin_precision)
        result = join_to_nodes(clusters, self.grid, self.features, s.radius)
        self._joined = list(result.samples)
        with self.staged("joined.csv") as path:
            write_joined(self._joined, self.features.columns, path)
        self.summary.update(
            survey_rows=len(loaded.samples),
            survey_dropped=loaded.dropped,
            survey_clusters=len(clusters),
            joined_clusters=len(self._joined),
            join_dropped=result.dropped,
        )
        return self._joined

    @stage("fit")
    def fit(self) -> Dict[str, FitReport]:
        r = self.config.regression
        data = to_dataset(self.joined, self.config.survey.log_target)
        for spec in r.models:
            report = split_harness(data, spec, r.n_splits, r.train_frac, self.config.seed, r.standardize, r.workers)
            self.fits[spec.name] = report
            with self.staged(f"fit_{spec.name}.csv", f"predictions_{spec.name}.csv") as (fit_path, pred_path):
                write_fit_report(report, fit_path)
                write_predictions(report.predictions, pred_path)
        self.summary["median_test_r2"] = {name: report.median_test_r2 for name, report in self.fits.items()}
        return self.fits

    def _detect(self, label: str, grid: CoarseGrid, net: GravityNetwork) -> CommunityPartition:
        c = self.config.community
        partition = detect_communities(net, c.resolution, c.seed, label, c.restarts)
        with self.staged(f"partition_{label}.csv", f"communities_{label}.geojson") as (csv_path, geo_path):
            write_partition(partition, csv_path)
            write_geojson(partition, grid, geo_path)
        self.partitions[label] = partition
        return partition

    @stage("communities")
    def communities(self) -> Dict[str, CommunityPartition]:
        """Partition each snapshot's network, or the main network when no snapshots are configured."""
        if self.config.inputs.snapshots:
            for label, paths in self.config.inputs.snapshots:
                grid = self._composite(paths)
                net = build_gravity_network(grid, self.config.gravity)
                with self.staged(f"nodes_{label}.csv", f"edges_{label}.tsv") as (node_path, edge_path):
                    write_node_table(grid, node_path)
                    write_edge_list(net, edge_path)
                self._detect(label, grid, net)
        else:
            self._detect(MAIN_LABEL, self.grid, self.network)
        self.summary["communities"] = {label: p.community_count for label, p in self.partitions.items()}
        self.summary["modularity"] = {label: p.modularity for label, p in self.partitions.items()}
        return self.partitions

    def _partition(self, label: str) -> CommunityPartition:
        if label not in self.partitions:
            self.partitions[label] = read_partition(self._existing(f"partition_{label}.csv", "communities"), label)
        return self.partitions[label]

    @stage("track")
    def track(self) -> List[TransitionReport]:
        labels = [label for label, _ in self.config.inputs.snapshots]
        if len(labels) < 2:
            raise ValidationError("tracking needs at least two inputs.snapshots")
        threshold = self.config.community.overlap_threshold
        for before, after in zip(labels, labels[1:]):
            report = track_communities(self._partition(before), self._partition(after), threshold)
            self.transitions.append(report)
            with self.staged(f"transitions_{before}_{after}.csv", f"transitions_{before}_{after}.txt") as (csv_path, txt_path):
                write_transitions(report, csv_path, txt_path)
        self.summary["transitions"] = {
            f"{r.label_from}->{r.label_to}": {kind: r.count(kind) for kind in sorted({e.kind for e in r.events})}
            for r in self.transitions
        }
        return self.transitions

    # -- whole run ------------------------------------------------------

    def run(self) -> RunReport:
        """Execute every stage the configured inputs allow, then write the summary."""
        self.check_inputs()
        inputs = self.config.inputs
        with self.staged("config.resolved.yaml") as path:
            dump_settings({k: v for k, v in self.config.raw.items() if k != "output_dir"}, path)
        if inputs.rasters:
            self.ingest()
            self.build_net()
            self.walk()
            self.build_features()
            if inputs.survey is not None:
                self.join()
                self.fit()
            else:
                logger.info("No survey configured; skipping join and fit")
        self.communities()
        if len(inputs.snapshots) > 1:
            self.track()
        self.write_summary()
        return RunReport(dict(self.summary), list(self.artifacts), dict(self.fits),
                         dict(self.partitions), list(self.transitions))

    def write_summary(self) -> None:
        with self.staged("summary.json", "summary.txt") as (json_path, text_path):
            json_path.write_text(summary_json(self.summary) + "\n", encoding="utf-8")
            with open(text_path, "w", encoding="utf-8") as f:
                Console(file=f, width=100, color_system=None).print(summary_table(self.summary))


def summary_json(summary: Dict[str, Any]) -> str:
    """One-line machine-readable record with sorted keys."""
    return json.dumps(summary, sort_keys=True)


def summary_table(summary: Dict[str, Any]) -> Table:
    table = Table(title="Run summary")
    table.add_column("item")
    table.add_column("value", justify="right")
    for key in sorted(summary):
        value = summary[key]
        if isinstance(value, dict):
            for sub in sorted(value):
                table.add_row(f"{key}.{sub}", _fmt(value[sub]))
        else:
            table.add_row(key, _fmt(value))
    return table


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.5f}"
    if isinstance(value, dict):
        return ", ".join(f"{k}={v}" for k, v in sorted(value.items()))
    return str(value)


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Run all stages for a validated configuration.

    Raises:
        ValidationError: If configured inputs are missing
        StageError: Naming the stage that failed, with the cause chained
    """
    return Pipeline(config).run()


def run_stage(config: PipelineConfig, name: str) -> Dict[str, Any]:
    """Run a single stage against prior outputs in the output directory; returns its summary entries."""
    pipeline = Pipeline(config)
    actions = {
        "ingest": pipeline.ingest,
        "build-net": pipeline.build_net,
        "walk": lambda: pipeline.walk(dump=True),
        "features": pipeline.build_features,
        "join": pipeline.join,
        "fit": pipeline.fit,
        "communities": pipeline.communities,
        "track": pipeline.track,
    }
    if name not in actions:
        raise ValidationError(f"unknown stage '{name}'; valid: {', '.join(STAGES)}")
    pipeline.check_inputs()
    actions[name]()
    pipeline.summary.pop("seed")
    return pipeline.summary


def run_transfer(config: PipelineConfig, train_path, test_path, model: Optional[str] = None) -> List[TransferReport]:
    """Fit on one joined table and score on another, for every configured model (or just `model`).

    Predictions are written to transfer_<model>.csv in the output directory.
    """
    train_samples, train_cols = read_joined(train_path)
    test_samples, test_cols = read_joined(test_path)
    if train_cols != test_cols:
        raise ValidationError(f"joined tables have different feature columns: {train_cols} vs {test_cols}")
    log_target = config.survey.log_target
    train, test = to_dataset(train_samples, log_target), to_dataset(test_samples, log_target)
    specs = [s for s in config.regression.models if model is None or s.name == model]
    if model is not None and not specs:
        specs = [ModelSpec(model)]
    pipeline = Pipeline(config)
    reports = []
    for spec in specs:
        report = transfer_fit(train, test, spec, config.seed, config.regression.standardize)
        reports.append(report)
        with pipeline.staged(f"transfer_{spec.name}.csv") as path:
            write_predictions(report.predictions, path)
    return reports


