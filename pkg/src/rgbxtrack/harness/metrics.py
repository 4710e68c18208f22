"""Precision, success AUC and mean IoU over tracked frames.

Success at threshold ``u`` counts frames with ``IoU >= u``, so a frame with
zero overlap still succeeds at ``u = 0``: an all-miss result scores 1/21.
"""
from __future__ import annotations

import numpy as np

from .tracker import TrackResult

IOU_THRESHOLDS = np.linspace(0.0, 1.0, 21)


def _values(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    return v[np.isfinite(v)]


def precision_at(center_errors, tau: float = 20.0) -> float:
    err = _values(center_errors)
    return float(np.mean(err <= tau)) if err.size else 0.0


def success_curve(ious, thresholds: np.ndarray = IOU_THRESHOLDS) -> np.ndarray:
    v = _values(ious)
    if not v.size:
        return np.zeros(len(thresholds))
    return (v[None, :] >= thresholds[:, None]).mean(axis=1)


def success_auc(ious, thresholds: np.ndarray = IOU_THRESHOLDS) -> float:
    return float(success_curve(ious, thresholds).mean())


def mean_iou(ious) -> float:
    v = _values(ious)
    return float(v.mean()) if v.size else 0.0


def metrics(result: TrackResult | list[TrackResult], tau: float = 20.0,
            skip_init: bool = True) -> dict[str, float]:
    """Pool frames over one or several results.

    The initialization frame reports the given box, so it is left out unless
    ``skip_init`` is false.
    """
    results = [result] if isinstance(result, TrackResult) else list(result)
    start = 1 if skip_init else 0
    ious = [v for r in results for v in r.ious[start:]]
    errs = [v for r in results for v in r.center_errors[start:]]
    return {"precision": precision_at(errs, tau), "success_auc": success_auc(ious),
            "mean_iou": mean_iou(ious), "frames": len(ious)}
