"""Keypoint accuracy and mask metrics, plus the per-task success rules.

Keypoint metrics compare two label -> pixel maps that must cover the same
labels: the mean distance (akd) and the fraction of keypoints within a
pixel threshold (ap_at).  Mask metrics operate on equal-shape boolean
rasters.  ``success`` applies the goal rule for a task type to a
measurement record such as the simulator's goal checks.
"""

from __future__ import annotations

from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .config import Config, DEFAULTS


class LabelMismatch(ValueError):
    """The two keypoint sets do not cover the same labels."""


class DimMismatch(ValueError):
    """The two masks have different shapes."""


class MissingField(KeyError):
    """The measurement record lacks a field the task rule needs."""


def _distances(pred: Mapping[str, Sequence[float]],
               gt: Mapping[str, Sequence[float]]) -> np.ndarray:
    if set(pred) != set(gt):
        missing = sorted(set(gt) - set(pred))
        extra = sorted(set(pred) - set(gt))
        raise LabelMismatch(f"label sets differ: missing {missing}, "
                            f"extra {extra}")
    if not pred:
        raise LabelMismatch("no labels to compare")
    labels = sorted(pred)
    a = np.asarray([pred[l] for l in labels], dtype=np.float64)
    b = np.asarray([gt[l] for l in labels], dtype=np.float64)
    return np.linalg.norm(a - b, axis=1)


def akd(pred: Mapping[str, Sequence[float]],
        gt: Mapping[str, Sequence[float]]) -> float:
    """Average keypoint distance in pixels over matched labels."""
    return float(_distances(pred, gt).mean())


def ap_at(pred: Mapping[str, Sequence[float]],
          gt: Mapping[str, Sequence[float]], tau: float) -> float:
    """Percentage of keypoints within ``tau`` pixels of ground truth."""
    d = _distances(pred, gt)
    return float((d <= tau).mean() * 100.0)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def success(task_type: str, record: Mapping[str, object],
            cfg: Config = DEFAULTS) -> bool:
    """Apply a task's goal rule to a measurement record.

    fold: mask IoU against the folded goal at least the fold threshold.
    flatten: coverage of the flat footprint at least the coverage bar.
    place: every particle inside the box.
    hang: enough particles on the bar and nothing touching the ground.
    """
    def need(key: str):
        if key not in record:
            raise MissingField(f"{task_type} rule needs field {key!r}")
        return record[key]

    if task_type == "fold":
        return float(need("iou")) >= cfg.fold_iou_threshold
    if task_type == "flatten":
        return float(need("coverage")) >= cfg.flatten_coverage_threshold
    if task_type == "place":
        return bool(need("all_inside"))
    if task_type == "hang":
        return bool(need("hung")) and not bool(need("ground_contact"))
    raise ValueError(f"no success rule for task type {task_type!r}")
