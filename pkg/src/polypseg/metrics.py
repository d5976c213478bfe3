"""Evaluation metrics: Dice, IoU, MAE, boundary F-measure, structure measure.

Dice/IoU binarize the prediction at a threshold (default 0.5); MAE is
computed on the soft map. The boundary F-measure matches 1-pixel boundaries
of prediction and label within a pixel tolerance using distance transforms
(default tolerance: 0.8% of the image diagonal, rounded, at least 1). The
structure measure is the standard object/region structural similarity
S = alpha * S_object + (1 - alpha) * S_region with the usual degenerate-label
special cases (all-zero label: 1 - mean(pred); all-one label: mean(pred)).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt

from .errors import ShapeError

_EPS = 1e-12

METRIC_NAMES = ("dice", "iou", "mae", "boundary_f", "s_measure")


@dataclass
class MetricReport:
    dice: float
    iou: float
    mae: float
    boundary_f: float
    s_measure: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_pair(pred: np.ndarray, label: np.ndarray):
    if pred.shape != label.shape:
        raise ShapeError(f"pred shape {pred.shape} != label shape {label.shape}")
    if not np.all(np.isfinite(pred)):
        raise ValueError("prediction contains non-finite values")


def dice_iou_mae(pred: np.ndarray, label: np.ndarray,
                 threshold: float = 0.5) -> tuple[float, float, float]:
    _check_pair(pred, label)
    p = pred >= threshold
    g = label >= 0.5
    inter = np.logical_and(p, g).sum()
    union = np.logical_or(p, g).sum()
    if union == 0:  # both empty
        dice, iou = 1.0, 1.0
    else:
        dice = 2.0 * inter / (p.sum() + g.sum())
        iou = inter / union
    mae = float(np.abs(pred - label).mean())
    return float(dice), float(iou), mae


def default_boundary_tol(shape) -> int:
    diag = np.sqrt(shape[0] ** 2 + shape[1] ** 2)
    return max(1, int(round(0.008 * diag)))


def _boundary(mask: np.ndarray) -> np.ndarray:
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    return mask & ~binary_erosion(mask, border_value=0)


def boundary_f(pred: np.ndarray, label: np.ndarray, tol_px: int | None = None,
               threshold: float = 0.5) -> float:
    _check_pair(pred, label)
    if tol_px is None:
        tol_px = default_boundary_tol(pred.shape)
    if tol_px < 0:
        raise ValueError(f"tol_px must be >= 0; got {tol_px}")
    pb = _boundary(pred >= threshold)
    gb = _boundary(label >= 0.5)
    if not pb.any() and not gb.any():
        return 1.0
    if not pb.any() or not gb.any():
        return 0.0
    dist_to_g = distance_transform_edt(~gb)
    dist_to_p = distance_transform_edt(~pb)
    precision = float((dist_to_g[pb] <= tol_px).mean())
    recall = float((dist_to_p[gb] <= tol_px).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _object_score(pred: np.ndarray, region: np.ndarray) -> float:
    if not region.any():
        return 0.0
    vals = pred[region]
    x = vals.mean()
    sigma = vals.std()
    return float(2.0 * x / (x * x + 1.0 + sigma + _EPS))


def _ssim_block(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n <= 1:
        return 1.0 if abs(float(pred.mean()) - float(gt.mean())) < _EPS else 0.0
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1)
    sy = ((gt - y) ** 2).sum() / (n - 1)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1)
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return float(a / (b + _EPS))
    return 1.0 if b == 0 else 0.0


def _region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    rows, cols = np.where(gt)
    cy = int(round(rows.mean()))
    cx = int(round(cols.mean()))
    h, w = gt.shape
    cy = min(max(cy, 1), h - 1)
    cx = min(max(cx, 1), w - 1)
    total = h * w
    score = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        gq = gt[rs, cs]
        pq = pred[rs, cs]
        score += (gq.size / total) * _ssim_block(pq, gq.astype(np.float64))
    return score


def s_measure(pred: np.ndarray, label: np.ndarray, alpha: float = 0.5) -> float:
    _check_pair(pred, label)
    gt = label >= 0.5
    mean_gt = gt.mean()
    if mean_gt == 0:  # all-background label
        return float(np.clip(1.0 - pred.mean(), 0.0, 1.0))
    if mean_gt == 1:  # all-foreground label
        return float(np.clip(pred.mean(), 0.0, 1.0))
    s_obj = mean_gt * _object_score(pred, gt) + (1 - mean_gt) * _object_score(1.0 - pred, ~gt)
    s_reg = _region_score(pred, gt)
    return float(np.clip(alpha * s_obj + (1.0 - alpha) * s_reg, 0.0, 1.0))


def evaluate_pair(pred: np.ndarray, label: np.ndarray, threshold: float = 0.5,
                  boundary_tol: int | None = None) -> MetricReport:
    d, i, m = dice_iou_mae(pred, label, threshold=threshold)
    return MetricReport(dice=d, iou=i, mae=m,
                        boundary_f=boundary_f(pred, label, tol_px=boundary_tol,
                                              threshold=threshold),
                        s_measure=s_measure(pred, label))


def aggregate(reports) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate zero metric reports")
    return MetricReport(*(float(np.mean([getattr(r, k) for r in reports]))
                          for k in METRIC_NAMES))


def write_metrics_csv(path, rows: list[tuple[str, MetricReport]]) -> None:
    """Per-image rows plus one trailing aggregate row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id",) + METRIC_NAMES)
        for rid, rep in rows:
            writer.writerow([rid] + [f"{getattr(rep, k):.6f}" for k in METRIC_NAMES])
        agg = aggregate([rep for _, rep in rows])
        writer.writerow(["aggregate"] + [f"{getattr(agg, k):.6f}" for k in METRIC_NAMES])


def write_metrics_jsonl(path, rows: list[tuple[str, MetricReport]]) -> None:
    with open(path, "w") as fh:
        for rid, rep in rows:
            fh.write(json.dumps({"id": rid, **rep.as_dict()}, sort_keys=True) + "\n")
        agg = aggregate([rep for _, rep in rows])
        fh.write(json.dumps({"id": "aggregate", **agg.as_dict()}, sort_keys=True) + "\n")
