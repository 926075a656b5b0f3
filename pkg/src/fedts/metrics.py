"""Confusion matrices, precision/recall/F1 and participant averaging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

AVERAGING_NOTE = (
    "precision/recall/F1 are one-vs-rest per class with 0/0 read as 0; 'macro' is the "
    "unweighted mean over all classes, 'weighted' is the support-weighted mean; "
    "experiment-level values are arithmetic means over participants"
)


def confusion(preds, labels, c: int) -> np.ndarray:
    """c x c counts; rows are true classes, columns predicted classes."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise InvalidArgumentError(f"{len(preds)} predictions for {len(labels)} labels")
    if len(preds) and (min(preds.min(), labels.min()) < 0 or max(preds.max(), labels.max()) >= c):
        raise InvalidArgumentError(f"class ids must lie in [0, {c})")
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass(frozen=True)
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    predicted: np.ndarray


def per_class(cm) -> ClassScores:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 0.0)
        recall = np.where(support > 0, tp / np.maximum(support, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return ClassScores(precision, recall, f1, support, predicted)


def precision_recall_f1(cm, averaging: str = "macro") -> tuple[float, float, float]:
    """Averaged one-vs-rest precision, recall and F1.

    A 0/0 ratio counts as 0, so a class that never occurs and is never
    predicted pulls the macro average down rather than being skipped.
    """
    cm = np.asarray(cm)
    if cm.size == 0 or cm.sum() == 0:
        raise InvalidArgumentError("confusion matrix is empty")
    s = per_class(cm)
    if averaging == "macro":
        return float(s.precision.mean()), float(s.recall.mean()), float(s.f1.mean())
    if averaging == "weighted":
        w = s.support / s.support.sum()
        return float(w @ s.precision), float(w @ s.recall), float(w @ s.f1)
    raise InvalidArgumentError(f"unknown averaging {averaging!r}")


def summarize(cm) -> dict:
    """Both averaging modes plus accuracy, as plain floats."""
    cm = np.asarray(cm)
    out = {}
    for mode in ("macro", "weighted"):
        p, r, f = precision_recall_f1(cm, mode)
        out[mode] = {"precision": p, "recall": r, "f1": f}
    out["accuracy"] = float(np.trace(cm) / cm.sum())
    return out


def mean_over_participants(results: list[dict]) -> dict:
    """Arithmetic mean of nested numeric dicts (same keys in every entry)."""
    if not results:
        raise InvalidArgumentError("no participant results to average")
    first = results[0]
    out = {}
    for key, value in first.items():
        if isinstance(value, dict):
            out[key] = mean_over_participants([r[key] for r in results])
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            out[key] = float(np.mean([r[key] for r in results]))
    return out


def report(per_participant: dict, ledger, nodes=None) -> dict:
    """Experiment-level summary: participant means plus transport totals.

    ``per_participant`` maps a participant id to its metric dict (nested
    numeric values; non-numeric entries such as confusion matrices are
    ignored).  ``nodes`` lists every topology node so silent nodes show up
    with zero bytes.
    """
    if not per_participant:
        raise InvalidArgumentError("missing participant results")
    totals = ledger.totals()
    ids = sorted(set(totals) | set(nodes or ()))
    zero = {"bytes_sent": 0, "bytes_received": 0, "bytes_transmitted": 0}
    per_node = {str(n): dict(totals.get(n, zero)) for n in ids}
    transmitted = [v["bytes_transmitted"] for v in per_node.values()]
    return {
        "mean": mean_over_participants(list(per_participant.values())),
        "transport": {
            "payloads": len(ledger),
            "total_bytes_sent": sum(v["bytes_sent"] for v in per_node.values()),
            "total_bytes_received": sum(v["bytes_received"] for v in per_node.values()),
            "total_bytes_transmitted": sum(transmitted),
            "mean_bytes_transmitted": float(np.mean(transmitted)) if transmitted else 0.0,
            "per_node": per_node,
        },
    }
