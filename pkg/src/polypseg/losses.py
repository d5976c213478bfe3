"""Training losses: weighted BCE + Dice, with deep supervision summing."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError

BCE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


def bce_dice(pred: T.Tensor, label, w: float = 0.5) -> T.Tensor:
    """w * BCE + (1 - w) * DiceLoss for one probability map vs binary label."""
    label = label.data if isinstance(label, T.Tensor) else np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ShapeError(f"pred shape {pred.shape} != label shape {label.shape}")
    p = T.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -T.tmean(label * T.log(p) + (1.0 - label) * T.log(1.0 - p))
    inter = T.tsum(p * label)
    dice_loss = 1.0 - (2.0 * inter + DICE_SMOOTH) / (T.tsum(p) + label.sum() + DICE_SMOOTH)
    return w * bce + (1.0 - w) * dice_loss


def total_loss(decoder_preds, fused_pred: T.Tensor, label, w: float = 0.5) -> T.Tensor:
    """Deep-supervised sum: one term per decoder head plus the fused head."""
    loss = bce_dice(fused_pred, label, w=w)
    for p in decoder_preds:
        loss = loss + bce_dice(p, label, w=w)
    return loss
