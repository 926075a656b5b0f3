"""Stationarity testing and conversion.

Each feature column is checked with an Augmented Dickey-Fuller test.
Non-stationary columns get a trailing moving-average subtracted and, when
autocorrelation reveals a season, are differenced at that period.  Plans
are fit on normal-class rows only and then applied unchanged to every
class, one simulation segment at a time.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSignalError, InsufficientDataError, InvalidArgumentError
from .features import autocorrelation_curve
from .timeseries import TabularDataset

# Large-sample MacKinnon critical values, constant-only regression.
MACKINNON_CONSTANT = {0.01: -3.43, 0.05: -2.86, 0.10: -2.57}


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    critical_value: float
    lags_used: int
    is_stationary: bool
    n_obs: int = 0
    degenerate: bool = False


def schwert_lags(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def critical_value(alpha: float, table: dict | None = None) -> float:
    table = MACKINNON_CONSTANT if table is None else table
    for level, value in table.items():
        if math.isclose(float(level), alpha):
            return float(value)
    raise InvalidArgumentError(f"no critical value for alpha={alpha}; known: {sorted(table)}")


def adf_test(
    series,
    max_lag: int | None = None,
    alpha: float = 0.05,
    critical_values: dict | None = None,
) -> AdfResult:
    """Augmented Dickey-Fuller test with a constant and no trend.

    Regresses ``dx[t]`` on a constant, ``x[t-1]`` and ``p`` lagged
    differences, where ``p`` follows the Schwert rule capped at ``max_lag``.
    A singular regression (e.g. a constant series) is reported as
    stationary with ``degenerate=True``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("series must be finite")
    T = len(x)
    p = schwert_lags(T)
    if max_lag is not None:
        if max_lag < 0:
            raise InvalidArgumentError("max_lag must be non-negative")
        p = min(p, max_lag)
    need = 20 + (max_lag if max_lag is not None else p)
    if T < need:
        raise InsufficientDataError(f"ADF needs at least {need} observations, got {T}")
    crit = critical_value(alpha, critical_values)

    dx = np.diff(x)
    y = dx[p:]
    nobs = len(y)
    cols = [np.ones(nobs), x[p : T - 1]]
    for i in range(1, p + 1):
        cols.append(dx[p - i : T - 1 - i])
    X = np.column_stack(cols)

    try:
        gamma, se = _ols_coef_se(X, y, index=1)
    except DegenerateSignalError:
        return AdfResult(-math.inf, crit, p, True, nobs, degenerate=True)
    stat = gamma / se
    return AdfResult(float(stat), crit, p, bool(stat < crit), nobs)


def _ols_coef_se(X: np.ndarray, y: np.ndarray, index: int) -> tuple[float, float]:
    n, k = X.shape
    if n <= k:
        raise DegenerateSignalError("more regressors than observations")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise DegenerateSignalError("singular regression matrix")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    sigma2 = resid @ resid / (n - k)
    if sigma2 <= 0.0:
        raise DegenerateSignalError("perfect fit, residual variance is zero")
    Rinv = np.linalg.solve(R, np.eye(k))
    var = sigma2 * (Rinv[index] @ Rinv[index])
    return float(beta[index]), float(math.sqrt(var))


def detrend(series, ma_window: int) -> np.ndarray:
    """Subtract the trailing moving average; the prefix uses an expanding mean."""
    x = np.asarray(series, dtype=np.float64)
    if ma_window < 1:
        raise InvalidArgumentError(f"ma_window must be >= 1, got {ma_window}")
    if ma_window > len(x):
        raise InvalidArgumentError(f"ma_window={ma_window} exceeds series length {len(x)}")
    # windowed sums rather than a running cumsum: no drift over long series
    sums = np.convolve(x, np.ones(ma_window))[: len(x)]
    counts = np.minimum(np.arange(1, len(x) + 1), ma_window)
    return x - sums / counts


def deseasonalize(series, period: int) -> np.ndarray:
    """Seasonal difference ``x[t] - x[t-period]``; the first ``period`` entries are 0."""
    x = np.asarray(series, dtype=np.float64)
    if period < 1:
        raise InvalidArgumentError(f"period must be >= 1, got {period}")
    if period >= len(x):
        raise InvalidArgumentError(f"period={period} must be shorter than the series ({len(x)})")
    out = np.zeros_like(x)
    out[period:] = x[period:] - x[:-period]
    return out


def _pick_period(ac: np.ndarray, min_lag: int, threshold: float):
    """First local AC peak above ``threshold`` once the curve has dipped to <= 0.

    ``ac[k]`` is the autocorrelation at lag ``k``.  Taking the first
    qualifying peak rather than the highest one returns the fundamental
    period instead of a noisy harmonic of it.
    """
    below = np.flatnonzero(ac <= 0.0)
    if len(below) == 0:
        return None
    for k in range(max(int(below[0]), min_lag, 1), len(ac) - 1):
        if ac[k] > ac[k - 1] and ac[k] >= ac[k + 1] and ac[k] > threshold:
            return k
    return None


def _mean_ac_curve(series_list, max_lag: int) -> np.ndarray:
    curves = []
    for s in series_list:
        s = np.asarray(s, dtype=np.float64)
        top = min(max_lag + 1, len(s) - 1)
        lags = np.arange(0, top + 1)
        curves.append(autocorrelation_curve(s, lags))
    width = min(len(c) for c in curves)
    return np.mean([c[:width] for c in curves], axis=0)


def detect_period(
    series, min_lag: int = 2, max_lag: int = 100, threshold: float = 0.3
) -> int | None:
    """Season length from the autocorrelation function, or None.

    Scans lags ``[min_lag, max_lag]`` for local maxima of the
    autocorrelation that occur after the curve first drops to zero; the
    first one above ``threshold`` is the period.
    """
    x = np.asarray(series, dtype=np.float64)
    if not 2 <= min_lag < max_lag < len(x):
        raise InvalidArgumentError(
            f"need 2 <= min_lag < max_lag < len(series), got {min_lag}, {max_lag}, {len(x)}"
        )
    return _detect_period_multi([x], min_lag, max_lag, threshold)


def _detect_period_multi(series_list, min_lag, max_lag, threshold):
    ac = _mean_ac_curve(series_list, max_lag)
    if np.all(ac == 0.0):
        return None
    return _pick_period(ac, min_lag, threshold)


@dataclass(frozen=True)
class StationaryConfig:
    alpha: float = 0.05
    max_lag: int | None = None
    ma_window: int = 12
    period_min_lag: int = 2
    period_max_lag: int = 100
    period_threshold: float = 0.3
    critical_values: dict | None = None


@dataclass(frozen=True)
class ColumnPlan:
    detrend: bool = False
    ma_window: int = 1
    deseasonalize: bool = False
    period: int | None = None
    adf_statistic: float | None = None

    @property
    def is_identity(self) -> bool:
        return not (self.detrend or self.deseasonalize)


@dataclass(frozen=True)
class StationaryPlan:
    feature_names: tuple[str, ...]
    columns: tuple[ColumnPlan, ...]
    normal_class: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "normal_class": self.normal_class,
            "config": self.config,
            "columns": [
                {"feature": name, **asdict(col)}
                for name, col in zip(self.feature_names, self.columns)
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StationaryPlan":
        raw = json.loads(text)
        names, cols = [], []
        for entry in raw["columns"]:
            entry = dict(entry)
            names.append(entry.pop("feature"))
            cols.append(ColumnPlan(**entry))
        return cls(tuple(names), tuple(cols), raw.get("normal_class", 0), raw.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "StationaryPlan":
        return cls.from_json(Path(path).read_text())


def identity_plan(feature_names) -> StationaryPlan:
    names = tuple(feature_names)
    return StationaryPlan(names, tuple(ColumnPlan() for _ in names))


def _column_segments(data: TabularDataset, j: int) -> list[np.ndarray]:
    return [data.values[sl, j] for _, sl in data.segment_slices() if sl.stop > sl.start]


def fit_plan(
    normal_data: TabularDataset,
    config: StationaryConfig | None = None,
    normal_class: int = 0,
) -> StationaryPlan:
    """Fit a per-column stationary plan on normal-class rows.

    Rows with any other label are ignored.  When the data holds several
    simulation segments, each segment is tested on its own and a column is
    declared non-stationary if most segments fail the test; the period is
    read from the segment-averaged autocorrelation of the detrended series.
    """
    cfg = config or StationaryConfig()
    mask = normal_data.labels == normal_class
    if not np.any(mask):
        raise InsufficientDataError("no normal-class rows to fit a stationary plan")
    rows = np.flatnonzero(mask)
    normal = TabularDataset(
        normal_data.values[rows],
        normal_data.labels[rows],
        normal_data.feature_names,
        None if normal_data.segments is None else normal_data.segments[rows],
    )

    columns = []
    for j in range(normal.n_features):
        segs = _column_segments(normal, j)
        stats = [
            adf_test(s, max_lag=cfg.max_lag, alpha=cfg.alpha, critical_values=cfg.critical_values)
            for s in segs
        ]
        non_stationary = sum(not r.is_stationary for r in stats)
        median_stat = float(np.median([r.statistic for r in stats]))
        if non_stationary * 2 <= len(stats):
            columns.append(ColumnPlan(adf_statistic=median_stat))
            continue
        ma = min(cfg.ma_window, min(len(s) for s in segs))
        detrended = [detrend(s, ma) for s in segs]
        max_lag = min(cfg.period_max_lag, min(len(s) for s in segs) - 2)
        period = None
        if cfg.period_min_lag < max_lag:
            period = _detect_period_multi(
                detrended, cfg.period_min_lag, max_lag, cfg.period_threshold
            )
        columns.append(
            ColumnPlan(
                detrend=True,
                ma_window=ma,
                deseasonalize=period is not None,
                period=period,
                adf_statistic=median_stat,
            )
        )
    return StationaryPlan(
        normal.feature_names, tuple(columns), normal_class, _config_dict(cfg)
    )


def _config_dict(cfg: StationaryConfig) -> dict:
    d = asdict(cfg)
    if d["critical_values"] is not None:
        d["critical_values"] = {str(k): v for k, v in d["critical_values"].items()}
    return d


def apply_plan(data: TabularDataset, plan: StationaryPlan) -> TabularDataset:
    """Apply a fitted plan column by column within each segment."""
    if len(plan.columns) != data.n_features:
        raise InvalidArgumentError(
            f"plan has {len(plan.columns)} columns, data has {data.n_features}"
        )
    if all(col.is_identity for col in plan.columns):
        return data
    out = data.values.copy()
    for _, sl in data.segment_slices():
        for j, col in enumerate(plan.columns):
            if col.is_identity:
                continue
            x = out[sl, j]
            if col.detrend:
                x = detrend(x, min(col.ma_window, len(x)))
            if col.deseasonalize and col.period is not None:
                # a segment no longer than one season is all leading entries
                x = deseasonalize(x, col.period) if col.period < len(x) else np.zeros_like(x)
            out[sl, j] = x
    return data.replace_values(out)
