"""Pipeline configuration: defaults, country presets, YAML file and CLI overrides."""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from errors import ValidationError
from gravity_graph import GravityParams
from regress import MODEL_FITTERS, ModelSpec
from walk_engine import WalkParams

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    "preset": None,
    "seed": None,
    "output_dir": "output",
    "grid": {"rows": None, "cols": None, "bbox": None, "aggregation": "sum", "log_base": "e"},
    "gravity": {"P": 1.0, "tau": 5.0, "k_rewire": 3},
    "walk": {"p": 1.0, "q": 0.5, "length": 20, "walks_per_node": 100, "workers": 1, "dump": False},
    "features": {"intensity": "log", "include_origin": False},
    "survey": {"bin_precision": 0.001, "radius": 0.25, "log_target": False},
    "regression": {
        "models": ["bayesian_ridge", "random_forest", "knn", "linear"],
        "n_splits": 100,
        "train_frac": 0.5,
        "standardize": False,
        "workers": 1,
        "knn": {"k": 5},
        "random_forest": {"n_trees": 100, "max_depth": 12, "min_leaf": 3, "m_try": None},
        "bayesian_ridge": {"max_iter": 300, "tol": 1e-4},
        "linear": {},
        "mean": {},
    },
    "community": {"resolution": 1.0, "overlap_threshold": 0.3, "seed": None, "restarts": 10},
    "inputs": {"rasters": [], "survey": None, "snapshots": {}},
}

# Country parameter table; Malawi's grid size is not published, so rows/cols stay unset.
PRESETS: Dict[str, Dict[str, Any]] = {
    "tanzania": {
        "grid": {"rows": 50, "cols": 51, "bbox": [29.3, -11.75, 40.45, -0.95]},
        "gravity": {"tau": 5.0, "k_rewire": 3},
    },
    "malawi": {
        "grid": {"bbox": [32.67, -17.13, 35.92, -9.36]},
        "gravity": {"tau": 2.0, "k_rewire": 1},
    },
    "synthetic": {
        "grid": {"rows": 20, "cols": 20, "bbox": [30.0, -10.0, 40.0, 0.0]},
        "gravity": {"P": 2.0, "tau": 2000.0, "k_rewire": 3},
        "regression": {"models": ["bayesian_ridge", "knn", "linear"]},
    },
}


@dataclass(frozen=True)
class GridSettings:
    rows: int
    cols: int
    bbox: Tuple[float, float, float, float]
    aggregation: str = "sum"
    log_base: float = math.e

    def __post_init__(self):
        if self.rows is None or self.cols is None:
            raise ValidationError("grid.rows and grid.cols are required (the malawi preset does not set them)")
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"grid.rows and grid.cols must be >= 1, got {self.rows}x{self.cols}")
        if self.bbox is None or len(self.bbox) != 4:
            raise ValidationError("grid.bbox must be [min_lon, min_lat, max_lon, max_lat]")
        if not (self.bbox[2] > self.bbox[0] and self.bbox[3] > self.bbox[1]):
            raise ValidationError(f"grid.bbox has no area: {list(self.bbox)}")
        if self.aggregation not in ("sum", "mean"):
            raise ValidationError(f"grid.aggregation must be 'sum' or 'mean', got '{self.aggregation}'")
        if not self.log_base > 1:
            raise ValidationError(f"grid.log_base must be > 1, got {self.log_base}")


@dataclass(frozen=True)
class FeatureSettings:
    intensity: str = "log"
    include_origin: bool = False

    def __post_init__(self):
        if self.intensity not in ("log", "raw"):
            raise ValidationError(f"features.intensity must be 'log' or 'raw', got '{self.intensity}'")


@dataclass(frozen=True)
class SurveySettings:
    bin_precision: float = 0.001
    radius: float = 0.25
    log_target: bool = False

    def __post_init__(self):
        if not self.bin_precision > 0:
            raise ValidationError(f"survey.bin_precision must be positive, got {self.bin_precision}")
        if not self.radius > 0:
            raise ValidationError(f"survey.radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class RegressionSettings:
    models: Tuple[ModelSpec, ...]
    n_splits: int = 100
    train_frac: float = 0.5
    standardize: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_splits < 1:
            raise ValidationError(f"regression.n_splits must be >= 1, got {self.n_splits}")
        if not 0 < self.train_frac < 1:
            raise ValidationError(f"regression.train_frac must be in (0, 1), got {self.train_frac}")
        if self.workers < 1:
            raise ValidationError(f"regression.workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class CommunitySettings:
    resolution: float = 1.0
    overlap_threshold: float = 0.3
    seed: Optional[int] = None
    restarts: int = 10

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValidationError(f"community.resolution must be positive, got {self.resolution}")
        if not 0 < self.overlap_threshold <= 1:
            raise ValidationError(f"community.overlap_threshold must be in (0, 1], got {self.overlap_threshold}")
        if self.restarts < 1:
            raise ValidationError(f"community.restarts must be >= 1, got {self.restarts}")


@dataclass(frozen=True)
class InputPaths:
    rasters: Tuple[Path, ...] = ()
    survey: Optional[Path] = None
    snapshots: Tuple[Tuple[str, Tuple[Path, ...]], ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: Path
    grid: GridSettings
    gravity: GravityParams
    walk: WalkParams
    features: FeatureSettings
    survey: SurveySettings
    regression: RegressionSettings
    community: CommunitySettings
    inputs: InputPaths
    dump_walks: bool = False
    preset: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict, repr=False, compare=False)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any], where: str = "") -> Dict[str, Any]:
    """Merge override into a copy of base; unknown keys are rejected."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        path = f"{where}.{key}" if where else str(key)
        if key not in merged:
            raise ValidationError(f"unknown config key '{path}'")
        if isinstance(merged[key], dict) and key != "snapshots":
            if not isinstance(value, dict):
                raise ValidationError(f"config key '{path}' must be a mapping")
            merged[key] = deep_merge(merged[key], value, path)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(assignment: str) -> Dict[str, Any]:
    """Turn 'section.key=value' into a nested dict; the value is parsed as a YAML scalar."""
    if "=" not in assignment:
        raise ValidationError(f"override '{assignment}' is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ValidationError(f"override '{assignment}' has an unparseable value ({e})") from None
    nested: Dict[str, Any] = {}
    cursor = nested
    keys = dotted.strip().split(".")
    for key in keys[:-1]:
        cursor = cursor.setdefault(key, {})
    cursor[keys[-1]] = value
    return nested


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValidationError(f"{path}: invalid YAML ({e})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def resolve_settings(file_data: Dict[str, Any], overrides: Sequence[Dict[str, Any]] = ()) -> Dict[str, Any]:
    """defaults < preset < file < overrides (flags win)."""
    preset = None
    for layer in [file_data, *overrides]:
        preset = layer.get("preset", preset)
    settings = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset '{preset}'; valid: {sorted(PRESETS)}")
        settings = deep_merge(settings, PRESETS[preset])
    settings = deep_merge(settings, file_data)
    for layer in overrides:
        settings = deep_merge(settings, layer)
    return settings


def _paths(values, base_dir: Path) -> Tuple[Path, ...]:
    if isinstance(values, (str, Path)):
        values = [values]
    return tuple((base_dir / Path(v)) if not Path(v).is_absolute() else Path(v) for v in values or [])


def _model_specs(section: Dict[str, Any]) -> Tuple[ModelSpec, ...]:
    names = section["models"]
    if isinstance(names, str):
        names = [names]
    specs = []
    for name in names:
        if name not in MODEL_FITTERS:
            raise ValidationError(f"regression.models: unknown model '{name}'; valid: {sorted(MODEL_FITTERS)}")
        params = {k: v for k, v in (section.get(name) or {}).items() if v is not None}
        specs.append(ModelSpec(name, params))
    if not specs:
        raise ValidationError("regression.models must name at least one model")
    return tuple(specs)


def _number(section: str, key: str, value, kind=float):
    try:
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{section}.{key} must be a{'n integer' if kind is int else ' number'}, got {value!r}") from None


def build_config(settings: Dict[str, Any], base_dir: Path = Path(".")) -> PipelineConfig:
    """Validate merged settings into a PipelineConfig; runs before any pipeline I/O.

    Raises:
        ValidationError: Naming the first offending key
    """
    if settings.get("seed") is None:
        raise ValidationError("seed is required (set 'seed' in the config or pass --seed)")
    seed = _number("", "seed", settings["seed"], int)

    g = settings["grid"]
    log_base = math.e if g["log_base"] in ("e", None) else _number("grid", "log_base", g["log_base"])
    grid = GridSettings(
        rows=None if g["rows"] is None else _number("grid", "rows", g["rows"], int),
        cols=None if g["cols"] is None else _number("grid", "cols", g["cols"], int),
        bbox=None if g["bbox"] is None else tuple(_number("grid", "bbox", v) for v in g["bbox"]),
        aggregation=g["aggregation"],
        log_base=log_base,
    )
    gv = settings["gravity"]
    gravity = GravityParams(
        P=_number("gravity", "P", gv["P"]),
        tau=_number("gravity", "tau", gv["tau"]),
        k_rewire=_number("gravity", "k_rewire", gv["k_rewire"], int),
    )
    if gravity.k_rewire >= grid.rows * grid.cols:
        raise ValidationError(f"gravity.k_rewire ({gravity.k_rewire}) must be below the node count ({grid.rows * grid.cols})")

    w = settings["walk"]
    walk = WalkParams(
        p=_number("walk", "p", w["p"]),
        q=_number("walk", "q", w["q"]),
        length=_number("walk", "length", w["length"], int),
        walks_per_node=_number("walk", "walks_per_node", w["walks_per_node"], int),
        seed=seed,
        workers=_number("walk", "workers", w["workers"], int),
    )
    features = FeatureSettings(settings["features"]["intensity"], bool(settings["features"]["include_origin"]))
    s = settings["survey"]
    survey = SurveySettings(
        _number("survey", "bin_precision", s["bin_precision"]),
        _number("survey", "radius", s["radius"]),
        bool(s["log_target"]),
    )
    r = settings["regression"]
    regression = RegressionSettings(
        models=_model_specs(r),
        n_splits=_number("regression", "n_splits", r["n_splits"], int),
        train_frac=_number("regression", "train_frac", r["train_frac"]),
        standardize=bool(r["standardize"]),
        workers=_number("regression", "workers", r["workers"], int),
    )
    c = settings["community"]
    community = CommunitySettings(
        _number("community", "resolution", c["resolution"]),
        _number("community", "overlap_threshold", c["overlap_threshold"]),
        None if c["seed"] is None else _number("community", "seed", c["seed"], int),
        _number("community", "restarts", c["restarts"], int),
    )
    i = settings["inputs"]
    snapshots = i.get("snapshots") or {}
    if not isinstance(snapshots, dict):
        raise ValidationError("inputs.snapshots must map a year to raster paths")
    inputs = InputPaths(
        rasters=_paths(i.get("rasters"), base_dir),
        survey=_paths(i["survey"], base_dir)[0] if i.get("survey") else None,
        snapshots=tuple((str(year), _paths(paths, base_dir)) for year, paths in sorted(snapshots.items(), key=lambda kv: str(kv[0]))),
    )
    output_dir = Path(settings["output_dir"])
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    return PipelineConfig(
        seed=seed,
        output_dir=output_dir,
        grid=grid,
        gravity=gravity,
        walk=walk,
        features=features,
        survey=survey,
        regression=regression,
        community=community,
        inputs=inputs,
        dump_walks=bool(w["dump"]),
        preset=settings.get("preset"),
        raw=settings,
    )


def load_config(path=None, overrides: Sequence[str] = (), seed: Optional[int] = None,
                output_dir: Optional[str] = None, preset: Optional[str] = None) -> PipelineConfig:
    """Load, merge and validate a configuration.

    Args:
        path: YAML config file (optional when a preset and flags supply everything)
        overrides: 'section.key=value' strings from --set
        seed: --seed flag
        output_dir: --output-dir flag
        preset: --preset flag

    Returns:
        Validated PipelineConfig
    """
    file_data = read_config_file(path) if path else {}
    base_dir = Path(path).resolve().parent if path else Path.cwd()
    layers = [parse_override(o) for o in overrides]
    flags: Dict[str, Any] = {}
    if seed is not None:
        flags["seed"] = seed
    if output_dir is not None:
        flags["output_dir"] = str(Path(output_dir).resolve())
    if preset is not None:
        flags["preset"] = preset
    if flags:
        layers.append(flags)
    return build_config(resolve_settings(file_data, layers), base_dir)


def preset_settings(preset: str) -> Dict[str, Any]:
    """Defaults merged with a preset, as written by `init-config`."""
    return resolve_settings({"preset": preset})


def dump_settings(settings: Dict[str, Any], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(settings, f, default_flow_style=False, sort_keys=False)
