"""Windowed self-attention with fused content/position keys, plus the
decoder chain that applies it to successive decoder scales.

For each query pixel (i, j) the score against window position (a, b) is

    q_ij . ( c1 * k_ab + c2 * r_{a-i, b-j} ),   c_m = relu(w_m) / (eps + relu(w1) + relu(w2)),

softmax-normalized over the window, applied to values. Queries and keys come
from the query-side map; values come from the key/value-side map, which is
bilinearly resampled to the query grid first. Windows are truncated at the
borders (no padding tokens), so the softmax always normalizes over real
pixels only.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import Conv2d, collect_parameters

_MASK_BIAS = -1e30

_window_cache: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def window_indices(h: int, w: int, radius: int):
    """Flat neighbour indices, offset-table indices, and validity mask.

    Returns (idx, off_idx, valid), each of shape (H*W, (2r+1)^2). Invalid
    (out-of-border) slots carry a clipped index and valid=False.
    """
    key = (h, w, radius)
    if key in _window_cache:
        return _window_cache[key]
    side = 2 * radius + 1
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    di, dj = np.meshgrid(np.arange(-radius, radius + 1),
                         np.arange(-radius, radius + 1), indexing="ij")
    ai = ii.reshape(-1, 1) + di.reshape(1, -1)   # (N, M)
    aj = jj.reshape(-1, 1) + dj.reshape(1, -1)
    valid = (ai >= 0) & (ai < h) & (aj >= 0) & (aj < w)
    idx = np.clip(ai, 0, h - 1) * w + np.clip(aj, 0, w - 1)
    off_idx = np.broadcast_to(((di + radius) * side + (dj + radius)).reshape(1, -1),
                              idx.shape).copy()
    _window_cache[key] = (idx, off_idx, valid)
    return idx, off_idx, valid


class LocationFusedAttention:
    """Single-head local attention over a (2*window+1)^2 neighbourhood."""

    def __init__(self, q_channels: int, kv_channels: int, d_out: int | None = None,
                 window: int = 3, eps: float = 1e-4,
                 rng: np.random.Generator | None = None):
        if window < 1:
            raise ConfigError(f"window radius must be >= 1; got {window}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.window = window
        self.eps = eps
        self.d_out = d_out if d_out is not None else q_channels
        scale_q = 1.0 / np.sqrt(q_channels)
        scale_kv = 1.0 / np.sqrt(kv_channels)
        side = 2 * window + 1
        self.w_q = T.Tensor(rng.normal(scale=scale_q, size=(self.d_out, q_channels)),
                            requires_grad=True)
        self.w_k = T.Tensor(rng.normal(scale=scale_q, size=(self.d_out, q_channels)),
                            requires_grad=True)
        self.w_v = T.Tensor(rng.normal(scale=scale_kv, size=(self.d_out, kv_channels)),
                            requires_grad=True)
        self.rel_pos = T.Tensor(rng.normal(scale=scale_q, size=(side * side, self.d_out)),
                                requires_grad=True)
        self.omega1 = T.Tensor(1.0, requires_grad=True)
        self.omega2 = T.Tensor(1.0, requires_grad=True)

    def mix_coefficients(self):
        """(c1, c2) from the non-negativity transform and epsilon normalization."""
        w1 = T.relu(self.omega1)
        w2 = T.relu(self.omega2)
        denom = self.eps + w1 + w2
        return w1 / denom, w2 / denom

    def __call__(self, q_src: T.Tensor, kv_src: T.Tensor, return_attn: bool = False):
        cq, h, w = q_src.shape
        kv = kv_src
        if kv.shape[1:] != (h, w):
            kv = T.resample(kv_src, h, w, mode="bilinear")
        n = h * w
        d = self.d_out
        qf = T.reshape(q_src, (cq, n))
        kvf = T.reshape(kv, (kv.shape[0], n))
        q = T.matmul(self.w_q, qf)     # (d, N)
        k = T.matmul(self.w_k, qf)     # (d, N)
        v = T.matmul(self.w_v, kvf)    # (d, N)
        idx, off_idx, valid = window_indices(h, w, self.window)
        kg = T.take(k, idx, axis=1)                          # (d, N, M)
        rg = T.take(T.transpose(self.rel_pos), off_idx, axis=1)
        c1, c2 = self.mix_coefficients()
        mix = c1 * kg + c2 * rg
        scores = T.tsum(T.reshape(q, (d, n, 1)) * mix, axis=0)   # (N, M)
        scores = scores + np.where(valid, 0.0, _MASK_BIAS)
        attn = T.softmax(scores, axis=1)
        vg = T.take(v, idx, axis=1)
        y = T.tsum(T.reshape(attn, (1,) + attn.shape) * vg, axis=2)  # (d, N)
        out = T.reshape(y, (d, h, w))
        return (out, attn) if return_attn else out

    def parameters(self):
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
                "rel_pos": self.rel_pos, "omega1": self.omega1, "omega2": self.omega2}


class DecoderFusion:
    """Pairwise attention over four decoder maps, concatenated at the finest scale.

    S_i = attend(d_i, d_{i+1}) for i = 1..3 (coarse to fine); each S_i is
    bilinearly resampled to d_4's grid, channel-concatenated in order, and
    projected to ``out_channels`` with a 1x1 conv. With ``use_attention=False``
    the S_i are the plain decoder maps (skip concatenation baseline).
    """

    def __init__(self, d_channels, out_channels: int, window: int = 3,
                 use_attention: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if len(d_channels) != 4:
            raise ConfigError(f"decoder fusion needs 4 channel widths; got {len(d_channels)}")
        self.use_attention = use_attention
        self.d_channels = tuple(d_channels)
        if use_attention:
            self.pairs = [LocationFusedAttention(d_channels[i], d_channels[i + 1],
                                                 window=window, rng=rng)
                          for i in range(3)]
        else:
            self.pairs = []
        self.proj = Conv2d(sum(d_channels[:3]), out_channels, 1, rng=rng)

    def __call__(self, dmaps) -> T.Tensor:
        if len(dmaps) != 4:
            raise ConfigError(f"decoder fusion expects 4 maps; got {len(dmaps)}")
        if self.use_attention:
            s = [self.pairs[i](dmaps[i], dmaps[i + 1]) for i in range(3)]
        else:
            s = [dmaps[i] for i in range(3)]
        fh, fw = dmaps[3].shape[1:]
        s = [T.resample(si, fh, fw, mode="bilinear") for si in s]
        return self.proj(T.concat(s, axis=0))

    def parameters(self):
        out = {}
        for i, pair in enumerate(self.pairs):
            out.update(collect_parameters(f"pair{i}", pair))
        out.update(collect_parameters("proj", self.proj))
        return out
