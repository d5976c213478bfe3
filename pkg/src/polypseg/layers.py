"""Small parameterized layers shared by the encoder, bottleneck, and decoder.

Parameters are float64 Tensors with requires_grad=True, initialized from an
explicit numpy Generator so runs are reproducible. Each layer exposes
``parameters()`` (name -> Tensor) and, where needed, ``buffers()`` for
non-trained state such as batch-norm running statistics.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError


class Conv2d:
    """Convolution with optional bias; odd square kernels only."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, pad: int = 0,
                 groups: int = 1, bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (c_in // groups) * k * k
        self.stride, self.pad, self.groups = stride, pad, groups
        self.weight = T.Tensor(rng.normal(scale=np.sqrt(2.0 / fan_in),
                                          size=(c_out, c_in // groups, k, k)),
                               requires_grad=True)
        self.bias = T.Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        y = T.conv2d(x, self.weight, stride=self.stride, pad=self.pad, groups=self.groups)
        if self.bias is not None:
            y = y + T.reshape(self.bias, (-1, 1, 1))
        return y

    def parameters(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out


class PatchDown:
    """Non-overlapping p x p patch embedding (stride-p 'convolution').

    Implemented as reshape + matmul so the conv2d primitive can stay odd-only.
    """

    def __init__(self, c_in: int, c_out: int, patch: int, rng: np.random.Generator):
        self.c_in, self.c_out, self.patch = c_in, c_out, patch
        fan_in = c_in * patch * patch
        self.weight = T.Tensor(rng.normal(scale=np.sqrt(2.0 / fan_in),
                                          size=(c_out, fan_in)), requires_grad=True)
        self.bias = T.Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        c, h, w = x.shape
        p = self.patch
        if c != self.c_in:
            raise ShapeError(f"PatchDown expects {self.c_in} channels, got {c}")
        if h % p or w % p:
            raise ConfigError(f"input {h}x{w} not divisible by patch size {p}")
        hp, wp = h // p, w // p
        cols = T.reshape(T.transpose(T.reshape(x, (c, hp, p, wp, p)), (0, 2, 4, 1, 3)),
                         (c * p * p, hp * wp))
        y = T.matmul(self.weight, cols) + T.reshape(self.bias, (-1, 1))
        return T.reshape(y, (self.c_out, hp, wp))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}


class ChannelLayerNorm:
    """Layer norm over the channel axis per spatial location."""

    def __init__(self, c: int, eps: float = 1e-6):
        self.eps = eps
        self.gamma = T.Tensor(np.ones(c), requires_grad=True)
        self.beta = T.Tensor(np.zeros(c), requires_grad=True)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}


class ChannelBatchNorm:
    """Batch norm over spatial positions per channel, with running statistics.

    Training mode uses the current sample's spatial statistics and updates the
    running buffers (momentum 0.1); eval mode uses the frozen buffers.
    """

    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1):
        self.eps, self.momentum = eps, momentum
        self.gamma = T.Tensor(np.ones(c), requires_grad=True)
        self.beta = T.Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = np.zeros(c)
        self.running_var = np.ones(c)

    def __call__(self, x: T.Tensor, training: bool = True) -> T.Tensor:
        c = x.shape[0]
        if x.shape[1] * x.shape[2] == 1:
            # spatial statistics are undefined over a single value (variance 0
            # would zero the output in training and poison the running
            # buffers); apply the affine part only, in both modes
            return (T.reshape(self.gamma, (c, 1, 1)) * x
                    + T.reshape(self.beta, (c, 1, 1)))
        if training:
            mu = T.tmean(x, axis=(1, 2), keepdims=True)
            xc = x - mu
            var = T.tmean(xc * xc, axis=(1, 2), keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
            xh = xc / T.sqrt(var + self.eps)
        else:
            mu = self.running_mean.reshape(c, 1, 1)
            var = self.running_var.reshape(c, 1, 1)
            xh = (x - mu) / np.sqrt(var + self.eps)
        return T.reshape(self.gamma, (c, 1, 1)) * xh + T.reshape(self.beta, (c, 1, 1))

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffers(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = np.array(mean, dtype=np.float64)
        self.running_var = np.array(var, dtype=np.float64)


def collect_parameters(prefix: str, module) -> dict[str, T.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.parameters().items()}
