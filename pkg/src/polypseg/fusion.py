"""Weighted feature fusion: fast-normalized (six-term), unbounded, and softmax.

The fast-normalized method blends three maps and their three pairwise means
with coefficients c_m = relu(w_m) / (eps + sum_j relu(w_j)), eps = 1e-4. The
unbounded and softmax variants are the ablation baselines.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError

FNF_EPS = 1e-4
FUSION_METHODS = ("fnf", "uf", "sf")


def _check_same_shapes(tensors):
    shapes = [t.shape for t in tensors]
    if len(set(shapes)) > 1:
        raise ShapeError(f"fusion inputs must share a shape; got {shapes}")


def fnf(i1: T.Tensor, i2: T.Tensor, i3: T.Tensor, w: T.Tensor) -> T.Tensor:
    """Fast normalized fusion of three maps with six trainable weights."""
    if w.size != 6:
        raise ConfigError(f"fnf needs exactly 6 weights; got {w.size}")
    _check_same_shapes([i1, i2, i3])
    wp = T.relu(T.reshape(w, (6,)))
    denom = FNF_EPS + T.tsum(wp)
    c = [T.take(wp, np.array([m]), axis=0) / denom for m in range(6)]
    return (c[0] * i1 + c[1] * i2 + c[2] * i3
            + c[3] * ((i1 + i2) * 0.5)
            + c[4] * ((i1 + i3) * 0.5)
            + c[5] * ((i2 + i3) * 0.5))


def fnf_coefficients(w: np.ndarray, eps: float = FNF_EPS) -> np.ndarray:
    """The six normalized coefficients for a weight vector (forward-only)."""
    wp = np.maximum(np.asarray(w, dtype=np.float64).reshape(-1), 0.0)
    return wp / (eps + wp.sum())


def uf(inputs, w: T.Tensor) -> T.Tensor:
    """Unbounded fusion: plain weighted sum."""
    inputs = list(inputs)
    if w.size != len(inputs):
        raise ConfigError(f"uf needs one weight per input: {w.size} vs {len(inputs)}")
    _check_same_shapes(inputs)
    wf = T.reshape(w, (-1,))
    out = T.take(wf, np.array([0]), axis=0) * inputs[0]
    for i, x in enumerate(inputs[1:], start=1):
        out = out + T.take(wf, np.array([i]), axis=0) * x
    return out


def sf(inputs, w: T.Tensor) -> T.Tensor:
    """Softmax fusion: convex combination with softmax coefficients."""
    inputs = list(inputs)
    if w.size != len(inputs):
        raise ConfigError(f"sf needs one weight per input: {w.size} vs {len(inputs)}")
    _check_same_shapes(inputs)
    coeff = T.softmax(T.reshape(w, (-1,)), axis=0)
    out = T.take(coeff, np.array([0]), axis=0) * inputs[0]
    for i, x in enumerate(inputs[1:], start=1):
        out = out + T.take(coeff, np.array([i]), axis=0) * x
    return out


class FusionHead:
    """Trainable weights plus method dispatch for three input maps."""

    def __init__(self, method: str):
        if method not in FUSION_METHODS:
            raise ConfigError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")
        self.method = method
        n = 6 if method == "fnf" else 3
        self.weights = T.Tensor(np.ones(n), requires_grad=True)

    def __call__(self, i1, i2, i3) -> T.Tensor:
        if self.method == "fnf":
            return fnf(i1, i2, i3, self.weights)
        if self.method == "uf":
            return uf([i1, i2, i3], self.weights)
        return sf([i1, i2, i3], self.weights)

    def parameters(self):
        return {"weights": self.weights}
