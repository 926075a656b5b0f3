"""Windowed autocorrelation / DFT features.

For every window and every original feature the two dominant
autocorrelation values (lags ``1..W-1``) and the two dominant DFT
amplitudes (bins ``1..W//2``) are appended, giving ``5n`` features per
time step.  Derived columns are ordered per original feature as
``ac1, ac2, dft1, dft2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateSignalError, InvalidArgumentError
from .timeseries import WindowedDataset

DERIVED_SUFFIXES = ("ac1", "ac2", "dft1", "dft2")


@dataclass(frozen=True)
class DominantFeatures:
    ac_dominant: tuple[float, float]
    dft_dominant: tuple[float, float]


def _as_signal(window) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("a signal window must be one-dimensional")
    if len(x) < 2:
        raise InvalidArgumentError(f"window length must be >= 2, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("window samples must be finite")
    return x


def _deviations(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deviations from the row mean and a per-row degenerate mask (last axis)."""
    mean = x.mean(axis=-1, keepdims=True)
    d = x - mean
    denom = np.einsum("...i,...i->...", d, d)
    scale = np.maximum(1.0, np.abs(mean[..., 0]))
    degenerate = denom <= x.shape[-1] * (1e-12 * scale) ** 2
    return d, degenerate


def autocorrelation(window, k: int) -> float:
    """Autocorrelation of ``window`` at lag ``k`` around the window mean.

    Raises DegenerateSignalError for a constant window.
    """
    x = _as_signal(window)
    W = len(x)
    if not 0 <= k < W:
        raise InvalidArgumentError(f"lag must lie in [0, {W - 1}], got {k}")
    d, degenerate = _deviations(x)
    if degenerate:
        raise DegenerateSignalError("constant window has no autocorrelation")
    return float(np.dot(d[: W - k], d[k:]) / np.dot(d, d))


def autocorrelation_curve(x, lags) -> np.ndarray:
    """Autocorrelation of each row of ``x`` (last axis = time) at every lag in ``lags``.

    Degenerate rows yield zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    W = x.shape[-1]
    lags = np.asarray(lags, dtype=np.int64)
    if np.any(lags < 0) or np.any(lags >= W):
        raise InvalidArgumentError(f"lags must lie in [0, {W - 1}]")
    d, degenerate = _deviations(x)
    denom = np.einsum("...i,...i->...", d, d)
    safe = np.where(degenerate, 1.0, denom)
    out = np.empty(x.shape[:-1] + (len(lags),))
    for j, k in enumerate(lags):
        num = np.einsum("...i,...i->...", d[..., : W - k], d[..., k:])
        out[..., j] = num / safe
    out[degenerate] = 0.0
    return out


@lru_cache(maxsize=64)
def _twiddles(W: int) -> np.ndarray:
    j = np.arange(W)
    # exponent reduced mod W keeps the phase argument small and exact
    return np.exp(-2j * np.pi * ((np.outer(j, j) % W) / W))


def dft(window, k: int) -> complex:
    """Bin ``k`` of the discrete Fourier transform of ``window``."""
    x = _as_signal(window)
    W = len(x)
    if not 0 <= k < W:
        raise InvalidArgumentError(f"frequency bin must lie in [0, {W - 1}], got {k}")
    return complex(np.dot(x, _twiddles(W)[k]))


def dft_all(x) -> np.ndarray:
    """All DFT bins of each row of ``x`` (last axis = time)."""
    x = np.asarray(x, dtype=np.float64)
    return x @ _twiddles(x.shape[-1]).T


def _top_two(values: np.ndarray, keys: np.ndarray) -> np.ndarray:
    # stable sort on the negated key: ties go to the smaller lag / bin
    order = np.argsort(-keys, axis=-1, kind="stable")[..., :2]
    return np.take_along_axis(values, order, axis=-1)


def dominant_batch(signals: np.ndarray) -> np.ndarray:
    """Dominant (ac1, ac2, dft1, dft2) for each row of ``signals`` (shape (..., W))."""
    signals = np.asarray(signals, dtype=np.float64)
    W = signals.shape[-1]
    if W < 4:
        raise InvalidArgumentError(f"dominant values need W >= 4, got {W}")
    ac = autocorrelation_curve(signals, np.arange(1, W))
    ac_top = _top_two(ac, np.abs(ac))
    mags = np.abs(dft_all(signals)[..., 1 : W // 2 + 1])
    dft_top = _top_two(mags, mags)
    out = np.concatenate([ac_top, dft_top], axis=-1)
    _, degenerate = _deviations(signals)
    out[degenerate] = 0.0
    return out


def dominant_values(window) -> DominantFeatures:
    """Two strongest autocorrelations and two largest non-DC DFT amplitudes."""
    x = _as_signal(window)
    vals = dominant_batch(x)
    return DominantFeatures(
        ac_dominant=(float(vals[0]), float(vals[1])),
        dft_dominant=(float(vals[2]), float(vals[3])),
    )


def engineer_features(data: WindowedDataset) -> WindowedDataset:
    """Append four derived features per original feature to every window.

    The derived values of a window are constant along its time axis: they
    summarise the window as a whole.
    """
    if data.ts < 4:
        raise InvalidArgumentError(f"feature engineering needs ts >= 4, got {data.ts}")
    w, ts, n = data.values.shape
    signals = data.values.transpose(0, 2, 1)  # (w, n, ts)
    derived = dominant_batch(signals).reshape(w, 4 * n)
    derived = np.broadcast_to(derived[:, None, :], (w, ts, 4 * n))
    names = data.feature_names or tuple(f"f{j}" for j in range(n))
    derived_names = tuple(f"{name}.{s}" for name in names for s in DERIVED_SUFFIXES)
    return WindowedDataset(
        values=np.concatenate([data.values, derived], axis=2),
        labels=data.labels.copy(),
        ts=ts,
        feature_names=tuple(names) + derived_names,
    )
