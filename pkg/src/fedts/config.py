"""Experiment configuration: parsing, validation and resolved snapshots."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import CsvFormat, SplitRecipe, SplitRule, SyntheticSpec
from .errors import ConfigError
from .model import TrainConfig
from .stationary import StationaryConfig

PIPELINES = ("base", "all", "feature_engineering", "stationary")
PARADIGMS = ("DFL", "SDFL", "CFL")
TOPOLOGIES = ("fully", "ring", "star")
ALLOWED_TOPOLOGIES = {"DFL": ("fully", "ring"), "SDFL": ("fully", "ring"), "CFL": ("star",)}

# the five paradigm/topology cells run for every pipeline
GRID_CELLS = (("DFL", "fully"), ("DFL", "ring"), ("SDFL", "fully"), ("SDFL", "ring"), ("CFL", "star"))


def uses_features(pipeline: str) -> bool:
    return pipeline in ("all", "feature_engineering")


def uses_stationary(pipeline: str) -> bool:
    return pipeline in ("all", "stationary")


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "csv"
    synthetic: SyntheticSpec = SyntheticSpec()
    train_csv: tuple[str, ...] = ()
    test_csv: tuple[str, ...] = ()
    csv_format: CsvFormat = CsvFormat()


@dataclass(frozen=True)
class ModelSection:
    hidden1: int = 128
    hidden2: int = 64
    num_classes: int | None = None  # None: number of classes left after the recipe
    ts: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = DataConfig()
    recipe: SplitRecipe | None = None  # None: derived from the data source
    runs_per_participant: dict | None = None
    pipeline: str = "base"
    paradigm: str = "DFL"
    topology: str = "fully"
    participants: int = 5
    rounds: int = 10
    hub: int = 0
    shared_init: bool = True
    model: ModelSection = ModelSection()
    train: TrainConfig = TrainConfig()
    stationary: StationaryConfig = StationaryConfig()
    scaler_ddof: int = 0
    seed: int = 0
    output_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.pipeline not in PIPELINES:
            raise ConfigError("pipeline", f"must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.paradigm not in PARADIGMS:
            raise ConfigError("paradigm", f"must be one of {PARADIGMS}, got {self.paradigm!r}")
        if self.topology not in TOPOLOGIES:
            raise ConfigError("topology", f"must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.topology not in ALLOWED_TOPOLOGIES[self.paradigm]:
            raise ConfigError(
                "topology",
                f"{self.paradigm} runs on {' or '.join(ALLOWED_TOPOLOGIES[self.paradigm])}, "
                f"not {self.topology!r}",
            )
        min_n = 3 if self.paradigm == "CFL" else 2
        if self.participants < min_n:
            raise ConfigError("participants", f"{self.paradigm} needs at least {min_n} participants")
        if self.rounds < 0:
            raise ConfigError("rounds", "must be >= 0")
        if not 0 <= self.hub < self.participants:
            raise ConfigError("hub", f"must be a participant id in [0, {self.participants})")
        if self.model.ts < 1:
            raise ConfigError("model.ts", "must be >= 1")
        if uses_features(self.pipeline) and self.model.ts < 4:
            raise ConfigError("model.ts", "feature engineering needs ts >= 4")
        for name in ("hidden1", "hidden2"):
            if getattr(self.model, name) < 1:
                raise ConfigError(f"model.{name}", "must be >= 1")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.train.epochs < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError("data.source", f"must be 'synthetic' or 'csv', got {self.data.source!r}")
        if self.data.source == "csv" and not self.data.train_csv:
            raise ConfigError("data.train_csv", "at least one CSV path is required")
        if self.data.source == "synthetic":
            try:
                self.data.synthetic.validate()
            except ValueError as exc:
                raise ConfigError("data.synthetic", str(exc)) from None
        return self

    def resolved(self) -> "ExperimentConfig":
        """Copy with every derived default filled in."""
        cfg = self
        if cfg.recipe is None:
            cfg = replace(cfg, recipe=default_recipe(cfg.data))
        return cfg

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        d = self.resolved().to_dict()
        d.pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw, "").validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def default_recipe(data: DataConfig) -> SplitRecipe:
    if data.source == "csv":
        return SplitRecipe()
    spec = data.synthetic
    R, T = spec.runs_per_class, spec.samples_per_run
    a, b = max(1, R // 2), max(1, (3 * R) // 4)
    samples = (spec.fault_onset + 1, T)
    return SplitRecipe(
        train=SplitRule("train", (1, a), samples),
        validation=SplitRule("train", (a + 1, b), samples),
        test=SplitRule("train", (b + 1, R), samples),
        remove_classes=(),
    )


_NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "stationary"): StationaryConfig,
    (DataConfig, "synthetic"): SyntheticSpec,
    (DataConfig, "csv_format"): CsvFormat,
}
_TUPLES = {"train_csv", "test_csv", "feature_columns", "remove_classes", "runs", "samples"}


def _build(cls, raw, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "config", "expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown field")
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}{key}"
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{path}.")
        elif cls is ExperimentConfig and key == "recipe":
            kwargs[key] = None if value is None else _recipe(value, path)
        elif key in _TUPLES and value is not None:
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        elif key == "critical_values" and value is not None:
            kwargs[key] = {float(k): float(v) for k, v in value.items()}
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix.rstrip(".") or "config", str(exc)) from None


def _recipe(raw, path) -> SplitRecipe:
    try:
        return SplitRecipe.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, f"invalid recipe ({exc})") from None
