"""Tabular to sliding-window conversion.

A tabular dataset of ``m`` rows and ``n`` features becomes a stack of
``m - ts + 1`` windows of shape ``(ts, n)``.  Window ``i`` covers rows
``[i, i + ts)`` and carries the label of its last row.  When the rows are
a concatenation of independent simulations, windows are cut per segment
so that no window mixes two simulations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyWindowError, InvalidArgumentError

BoundaryPolicy = Literal["per-simulation", "global"]


@dataclass(frozen=True)
class TabularDataset:
    """Rows of samples with one class id per row.

    ``segments`` optionally assigns every row to a simulation segment.  Rows
    of one segment must be contiguous.  ``segment_keys[s]`` is the
    ``(fault_class, simulation_run)`` pair that produced segment ``s``.
    """

    values: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    segments: np.ndarray | None = None
    segment_keys: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 2:
            raise InvalidArgumentError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[0] != labels.shape[0]:
            raise InvalidArgumentError(
                f"{values.shape[0]} rows but {labels.shape[0]} labels"
            )
        if values.shape[1] < 1:
            raise InvalidArgumentError("at least one feature is required")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("values must be finite")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise InvalidArgumentError(
                f"{len(names)} feature names for {values.shape[1]} columns"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)
        if self.segments is not None:
            seg = np.asarray(self.segments, dtype=np.int64)
            if seg.shape != labels.shape:
                raise InvalidArgumentError("segments must have one entry per row")
            object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "segment_keys", tuple(tuple(k) for k in self.segment_keys))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def segment_slices(self) -> list[tuple[int, slice]]:
        """(segment id, row slice) pairs in row order; one pair when unsegmented."""
        if self.segments is None or self.n_rows == 0:
            return [(0, slice(0, self.n_rows))]
        seg = self.segments
        starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
        ends = np.r_[starts[1:], len(seg)]
        ids = seg[starts]
        if len(np.unique(ids)) != len(ids):
            raise InvalidArgumentError("rows of a segment must be contiguous")
        return [(int(s), slice(int(a), int(b))) for s, a, b in zip(ids, starts, ends)]

    def select_segments(self, segment_ids) -> "TabularDataset":
        """Keep the given segments (in the given order), renumbered 0..k-1."""
        slices = dict(self.segment_slices())
        parts, labels, segs, keys = [], [], [], []
        for new_id, sid in enumerate(segment_ids):
            sl = slices[sid]
            parts.append(self.values[sl])
            labels.append(self.labels[sl])
            segs.append(np.full(sl.stop - sl.start, new_id, dtype=np.int64))
            if self.segment_keys:
                keys.append(self.segment_keys[sid])
        n = self.n_features
        return TabularDataset(
            values=np.concatenate(parts) if parts else np.empty((0, n)),
            labels=np.concatenate(labels) if labels else np.empty(0, dtype=np.int64),
            feature_names=self.feature_names,
            segments=np.concatenate(segs) if segs else np.empty(0, dtype=np.int64),
            segment_keys=tuple(keys),
        )

    def replace_values(self, values: np.ndarray) -> "TabularDataset":
        return TabularDataset(values, self.labels, self.feature_names, self.segments, self.segment_keys)


@dataclass(frozen=True)
class WindowedDataset:
    """Windows of shape ``(w, ts, n)`` with one label per window."""

    values: np.ndarray
    labels: np.ndarray
    ts: int
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.ts:
            raise InvalidArgumentError(
                f"values shape {self.values.shape} does not match ts={self.ts}"
            )
        if self.values.shape[0] != len(self.labels):
            raise InvalidArgumentError("one label per window is required")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


def _window_block(values: np.ndarray, ts: int) -> np.ndarray:
    # sliding_window_view puts the window axis last: (w, n, ts) -> (w, ts, n)
    return sliding_window_view(values, ts, axis=0).transpose(0, 2, 1)


def window(
    data: TabularDataset, ts: int, boundary_policy: BoundaryPolicy = "per-simulation"
) -> WindowedDataset:
    """Cut ``data`` into overlapping windows of ``ts`` consecutive rows.

    Returns ``m - ts + 1`` windows (per segment under the per-simulation
    policy).  The label of a window is the label of its last row.
    """
    if not isinstance(ts, (int, np.integer)) or ts < 1:
        raise InvalidArgumentError(f"ts must be a positive integer, got {ts!r}")
    if boundary_policy not in ("per-simulation", "global"):
        raise InvalidArgumentError(f"unknown boundary policy {boundary_policy!r}")

    if boundary_policy == "global" or data.segments is None:
        slices = [slice(0, data.n_rows)]
    else:
        slices = [sl for _, sl in data.segment_slices()]

    blocks, labels = [], []
    for sl in slices:
        rows = sl.stop - sl.start
        if ts > rows:
            raise EmptyWindowError(f"ts={ts} exceeds segment length {rows}")
        blocks.append(_window_block(data.values[sl], ts))
        labels.append(data.labels[sl][ts - 1:])

    return WindowedDataset(
        values=np.ascontiguousarray(np.concatenate(blocks)),
        labels=np.concatenate(labels),
        ts=int(ts),
        feature_names=data.feature_names,
    )
