"""Dataset ingestion, the split/trim/scale recipe, partitioning and synthesis.

Records are held column-wise in a ``RecordTable``: one row per sample with
its fault class, simulation run and 1-based sample index.  A (class, run)
pair identifies one simulation segment.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError, ParseError, ShortfallError
from .timeseries import TabularDataset

log = logging.getLogger(__name__)

TEP_FEATURES = tuple(f"xmeas_{i}" for i in range(1, 42)) + tuple(f"xmv_{i}" for i in range(1, 12))


@dataclass(frozen=True)
class SimulationRecord:
    fault_class: int
    simulation_run: int
    sample_index: int
    features: tuple[float, ...]


@dataclass
class RecordTable:
    fault_class: np.ndarray
    simulation_run: np.ndarray
    sample_index: np.ndarray
    features: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        self.fault_class = np.asarray(self.fault_class, dtype=np.int64)
        self.simulation_run = np.asarray(self.simulation_run, dtype=np.int64)
        self.sample_index = np.asarray(self.sample_index, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.fault_class), -1)
        self.feature_names = tuple(self.feature_names)

    def __len__(self) -> int:
        return len(self.fault_class)

    def __iter__(self) -> Iterator[SimulationRecord]:
        for i in range(len(self)):
            yield SimulationRecord(
                int(self.fault_class[i]),
                int(self.simulation_run[i]),
                int(self.sample_index[i]),
                tuple(float(v) for v in self.features[i]),
            )

    def sorted(self) -> "RecordTable":
        order = np.lexsort((self.sample_index, self.simulation_run, self.fault_class))
        return self.take(order)

    def take(self, idx) -> "RecordTable":
        return RecordTable(
            self.fault_class[idx], self.simulation_run[idx], self.sample_index[idx],
            self.features[idx], self.feature_names,
        )

    def segments(self) -> list[tuple[tuple[int, int], np.ndarray]]:
        """((class, run), row indices sorted by sample) in (class, run) order."""
        order = np.lexsort((self.sample_index, self.simulation_run, self.fault_class))
        keys = np.stack([self.fault_class[order], self.simulation_run[order]], axis=1)
        if len(keys) == 0:
            return []
        cut = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
        return [
            ((int(keys[a, 0]), int(keys[a, 1])), order[a:b])
            for a, b in zip(np.r_[0, cut], np.r_[cut, len(keys)])
        ]

    @classmethod
    def concat(cls, tables) -> "RecordTable":
        tables = list(tables)
        names = tables[0].feature_names
        for t in tables[1:]:
            if t.feature_names != names:
                raise InvalidArgumentError("record tables have different feature columns")
        return cls(
            np.concatenate([t.fault_class for t in tables]),
            np.concatenate([t.simulation_run for t in tables]),
            np.concatenate([t.sample_index for t in tables]),
            np.concatenate([t.features for t in tables]),
            names,
        )


# ------------------------------------------------------------------ ingestion


@dataclass(frozen=True)
class CsvFormat:
    """Column mapping; the defaults follow the public TEP CSV export."""

    class_column: str = "faultNumber"
    run_column: str = "simulationRun"
    sample_column: str = "sample"
    feature_columns: tuple[str, ...] | None = None  # None: every other column
    delimiter: str = ","


def ingest_csv(path, format_spec: CsvFormat | None = None) -> RecordTable:
    """Parse a CSV into a record table ordered by (class, run, sample)."""
    fmt = format_spec or CsvFormat()
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        try:
            header = [h.strip().strip('"') for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        # R exports often lead with an unnamed row-index column
        index = {name: i for i, name in enumerate(header) if name}
        for col in (fmt.class_column, fmt.run_column, fmt.sample_column):
            if col not in index:
                raise ParseError(f"missing column {col!r}", path, 1)
        if fmt.feature_columns is None:
            skip = {fmt.class_column, fmt.run_column, fmt.sample_column}
            feature_cols = [n for n in header if n and n not in skip]
        else:
            feature_cols = list(fmt.feature_columns)
            missing = [c for c in feature_cols if c not in index]
            if missing:
                raise ParseError(f"missing feature columns {missing}", path, 1)
        if not feature_cols:
            raise ParseError("no feature columns", path, 1)
        feat_idx = [index[c] for c in feature_cols]
        ci, ri, si = index[fmt.class_column], index[fmt.run_column], index[fmt.sample_column]
        width = len(header)

        cls_, run, sample, rows = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise ParseError(
                    f"expected {width} cells ({len(feature_cols)} features), got {len(row)}",
                    path, lineno,
                )
            try:
                cls_.append(int(float(row[ci])))
                run.append(int(float(row[ri])))
                sample.append(int(float(row[si])))
                rows.append([float(row[j]) for j in feat_idx])
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", path, lineno) from None
            if not np.all(np.isfinite(rows[-1])):
                raise ParseError("non-finite feature value", path, lineno)

    table = RecordTable(
        np.array(cls_, dtype=np.int64), np.array(run, dtype=np.int64),
        np.array(sample, dtype=np.int64),
        np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_cols)),
        tuple(feature_cols),
    )
    return table.sorted()


def write_csv(table: RecordTable, path, format_spec: CsvFormat | None = None) -> None:
    fmt = format_spec or CsvFormat()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=fmt.delimiter)
        w.writerow([fmt.class_column, fmt.run_column, fmt.sample_column, *table.feature_names])
        for i in range(len(table)):
            w.writerow([
                int(table.fault_class[i]), int(table.simulation_run[i]), int(table.sample_index[i]),
                *(repr(float(v)) for v in table.features[i]),
            ])


# ------------------------------------------------------------- split recipe


@dataclass(frozen=True)
class SplitRule:
    """Runs and samples (both inclusive, 1-based sample ids) kept for one split."""

    source: str = "train"  # "train" or "test" record table
    runs: tuple[int, int] = (1, 60)
    samples: tuple[int, int] = (21, 500)


@dataclass(frozen=True)
class SplitRecipe:
    train: SplitRule = SplitRule("train", (1, 60), (21, 500))
    validation: SplitRule = SplitRule("train", (61, 90), (21, 500))
    test: SplitRule = SplitRule("test", (1, 30), (161, 500))
    remove_classes: tuple[int, ...] = (3, 9, 15)

    @classmethod
    def from_dict(cls, raw: dict) -> "SplitRecipe":
        kw = {}
        for name in ("train", "validation", "test"):
            if name in raw:
                r = raw[name]
                kw[name] = SplitRule(r.get("source", "train"), tuple(r["runs"]), tuple(r["samples"]))
        if "remove_classes" in raw:
            kw["remove_classes"] = tuple(raw["remove_classes"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass(frozen=True)
class SplitResult:
    train: TabularDataset
    validation: TabularDataset
    test: TabularDataset
    class_map: dict[int, int]  # original fault id -> dense label


def _build_split(table: RecordTable, rule: SplitRule, removed, class_map) -> TabularDataset:
    lo_run, hi_run = rule.runs
    lo_s, hi_s = rule.samples
    want = hi_s - lo_s + 1
    parts, labels, segs, keys = [], [], [], []
    for (cls_, run), rows in table.segments():
        if cls_ in removed or not lo_run <= run <= hi_run:
            continue
        samples = table.sample_index[rows]
        keep = rows[(samples >= lo_s) & (samples <= hi_s)]
        if len(keep) != want:
            raise InvalidArgumentError(
                f"class {cls_} run {run}: {len(keep)} samples in [{lo_s}, {hi_s}], expected {want}"
            )
        parts.append(table.features[keep])
        labels.append(np.full(len(keep), class_map[cls_], dtype=np.int64))
        segs.append(np.full(len(keep), len(keys), dtype=np.int64))
        keys.append((cls_, run))
    n = table.features.shape[1]
    return TabularDataset(
        np.concatenate(parts) if parts else np.empty((0, n)),
        np.concatenate(labels) if labels else np.empty(0, dtype=np.int64),
        table.feature_names,
        np.concatenate(segs) if segs else np.empty(0, dtype=np.int64),
        tuple(keys),
    )


def apply_split_recipe(
    records: RecordTable, recipe: SplitRecipe | None = None, test_records: RecordTable | None = None
) -> SplitResult:
    """Select runs and sample ranges per split, drop removed classes, re-index labels.

    ``test_records`` supplies the table for rules whose source is "test";
    when omitted, ``records`` serves both.
    """
    recipe = recipe or SplitRecipe()
    tables = {"train": records, "test": test_records if test_records is not None else records}
    removed = set(recipe.remove_classes)
    present = set(np.unique(records.fault_class).tolist())
    if test_records is not None:
        present |= set(np.unique(test_records.fault_class).tolist())
    kept = sorted(present - removed)
    class_map = {c: i for i, c in enumerate(kept)}
    splits = {}
    for name in ("train", "validation", "test"):
        rule = getattr(recipe, name)
        if rule.source not in tables:
            raise InvalidArgumentError(f"{name}: unknown source {rule.source!r}")
        splits[name] = _build_split(tables[rule.source], rule, removed, class_map)
        log.info("%s split: %d rows, %d runs", name, splits[name].n_rows, len(splits[name].segment_keys))
    return SplitResult(splits["train"], splits["validation"], splits["test"], class_map)


# -------------------------------------------------------------------- scaler


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    ddof: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {"mean": self.mean.tolist(), "std": self.std.tolist(), "ddof": self.ddof}, indent=2
        )

    @classmethod
    def from_json(cls, text: str) -> "Scaler":
        raw = json.loads(text)
        return cls(np.array(raw["mean"]), np.array(raw["std"]), raw.get("ddof", 0))


def fit_scaler(train: TabularDataset, ddof: int = 0) -> Scaler:
    """Per-column mean and std (population convention unless ddof=1)."""
    if train.n_rows == 0:
        raise InvalidArgumentError("cannot fit a scaler on an empty dataset")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0, ddof=ddof) if train.n_rows > ddof else np.zeros_like(mean)
    std = np.where(std < 1e-12, 1.0, std)
    return Scaler(mean, std, ddof)


def scale(data: TabularDataset, scaler: Scaler) -> TabularDataset:
    if data.n_features != len(scaler.mean):
        raise InvalidArgumentError(
            f"scaler fit on {len(scaler.mean)} features, data has {data.n_features}"
        )
    return data.replace_values((data.values - scaler.mean) / scaler.std)


# ---------------------------------------------------------------- partition


@dataclass
class PartitionPlan:
    participants: list[dict[str, list[tuple[int, int]]]]
    plan_seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "plan_seed": self.plan_seed,
                "participants": [
                    {split: [list(k) for k in keys] for split, keys in p.items()}
                    for p in self.participants
                ],
            },
            indent=2,
        )


def partition(
    datasets: dict[str, TabularDataset],
    n_participants: int,
    plan_seed: int | None = None,
    runs_per_participant: dict[str, int] | None = None,
) -> tuple[PartitionPlan, list[dict[str, TabularDataset]]]:
    """Deal simulation runs round-robin to participants, class by class.

    For each split and class, runs are sorted by run id and the run at
    position ``j`` goes to participant ``j % n_participants``.  When
    ``runs_per_participant[split]`` is set, only the first ``k * n`` runs of
    each class are used and fewer is a ShortfallError.  ``plan_seed`` is
    recorded for provenance only; the assignment is deterministic.
    """
    if n_participants < 1:
        raise InvalidArgumentError("n_participants must be >= 1")
    quotas = runs_per_participant or {}
    plan = PartitionPlan([{s: [] for s in datasets} for _ in range(n_participants)], plan_seed)
    out = [dict() for _ in range(n_participants)]
    for split, data in datasets.items():
        by_class: dict[int, list[tuple[int, int]]] = {}
        for sid, (cls_, run) in enumerate(data.segment_keys):
            by_class.setdefault(cls_, []).append((run, sid))
        assigned = [[] for _ in range(n_participants)]
        for cls_ in sorted(by_class):
            runs = sorted(by_class[cls_])
            k = quotas.get(split)
            if k is not None:
                need = k * n_participants
                if len(runs) < need:
                    raise ShortfallError(
                        f"class {cls_}, split {split!r}: {len(runs)} runs available, "
                        f"{need} needed ({k} per participant x {n_participants})"
                    )
                runs = runs[:need]
            for j, (run, sid) in enumerate(runs):
                p = j % n_participants
                assigned[p].append(sid)
                plan.participants[p][split].append((cls_, run))
        for p in range(n_participants):
            out[p][split] = data.select_segments(assigned[p])
            log.info("participant %d %s: %d runs, %d rows", p, split, len(assigned[p]), out[p][split].n_rows)
    return plan, out


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SyntheticSpec:
    """TEP-like generator: AR(1) features, optional season/trend, faults after onset.

    Every run of class ``c > 0`` has the fault active from ``fault_onset``
    (0-based sample) on, yet all its samples carry label ``c`` as in the
    TEP exports.  The fault shifts the mean of feature ``(c-1) % n`` by
    ``fault_shift`` stationary standard deviations and, when
    ``fault_oscillation > 0``, adds a sinusoid of period ``3 + c`` to the
    same feature.
    """

    n_features: int = 8
    n_classes: int = 4
    runs_per_class: int = 20
    samples_per_run: int = 200
    seed: int = 0
    ar_coef: float = 0.5
    seasonal_period: int | None = None
    seasonal_amplitude: float = 0.0
    trend: str = "none"  # "none" or "random_walk"
    trend_scale: float = 1.0
    fault_onset: int = 20
    fault_shift: float = 4.0
    fault_oscillation: float = 0.0

    def validate(self) -> None:
        if self.n_features < 1 or self.n_classes < 1 or self.runs_per_class < 1:
            raise InvalidArgumentError("n_features, n_classes and runs_per_class must be >= 1")
        if self.samples_per_run < 2:
            raise InvalidArgumentError("samples_per_run must be >= 2")
        if not -1.0 < self.ar_coef < 1.0:
            raise InvalidArgumentError("ar_coef must lie in (-1, 1)")
        if self.trend not in ("none", "random_walk"):
            raise InvalidArgumentError(f"unknown trend {self.trend!r}")
        if self.seasonal_period is not None and self.seasonal_period < 2:
            raise InvalidArgumentError("seasonal_period must be >= 2")
        if not 0 <= self.fault_onset < self.samples_per_run:
            raise InvalidArgumentError("fault_onset must lie inside the run")


def _synth_run(spec: SyntheticSpec, cls_: int, run: int, level, spread) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, cls_, run])
    T, n, phi = spec.samples_per_run, spec.n_features, spec.ar_coef
    eps = rng.normal(scale=np.sqrt(1.0 - phi * phi), size=(T, n))
    x = np.empty((T, n))
    x[0] = rng.normal(size=n)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + eps[t]
    t = np.arange(T)[:, None]
    if spec.seasonal_period and spec.seasonal_amplitude:
        phase = rng.uniform(0.0, 2 * np.pi, size=n)
        x += spec.seasonal_amplitude * np.sin(2 * np.pi * t / spec.seasonal_period + phase)
    if spec.trend == "random_walk":
        x += np.cumsum(rng.normal(scale=spec.trend_scale, size=(T, n)), axis=0)
    if cls_ > 0:
        f = (cls_ - 1) % n
        on = spec.fault_onset
        x[on:, f] += spec.fault_shift
        if spec.fault_oscillation:
            x[on:, f] += spec.fault_oscillation * np.sin(2 * np.pi * np.arange(T - on) / (3 + cls_))
    return level + spread * x


def synthesize(spec: SyntheticSpec) -> RecordTable:
    """Deterministic synthetic records; run ids and sample ids are 1-based."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 2**31 - 1])
    level = rng.uniform(-2.0, 2.0, size=spec.n_features)
    spread = rng.uniform(0.5, 2.0, size=spec.n_features)
    T = spec.samples_per_run
    blocks, cls_col, run_col = [], [], []
    for c in range(spec.n_classes):
        for r in range(1, spec.runs_per_class + 1):
            blocks.append(_synth_run(spec, c, r, level, spread))
            cls_col.append(np.full(T, c))
            run_col.append(np.full(T, r))
    n_runs = len(blocks)
    return RecordTable(
        np.concatenate(cls_col), np.concatenate(run_col),
        np.tile(np.arange(1, T + 1), n_runs), np.concatenate(blocks),
        tuple(f"x{j}" for j in range(spec.n_features)),
    )
