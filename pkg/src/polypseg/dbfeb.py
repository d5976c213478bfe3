"""Dual-graph feature enhancement bottleneck block.

Two branches over the bottleneck map A:
  * spatial branch: pixel-affinity attention. B and C are 1x1 convs of A,
    scores[i, j] = B_i . C_j are softmax-normalized over i (column sums are 1),
    and the output is ReLU(reshape(D @ S) + A), so each output pixel j mixes
    D according to the influence of pixel i on pixel j.
  * structural branch: the map becomes a weighted grid graph, each node
    attends over shortest-path features of its neighbourhood within a hop
    budget, and the per-node outputs are reassembled, projected back to C
    channels with a 1x1 conv, and residually added to A.
Branch outputs are channel-concatenated and fused by 1x1 conv + batch norm.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .graphs import build_grid_graph, dijkstra, init_spath_attention, spath_attention
from .layers import ChannelBatchNorm, Conv2d, collect_parameters


class DualGraphBlock:
    def __init__(self, channels: int, num_heads: int = 2, max_hops: int = 3,
                 connectivity: int = 4, cost_fn: str = "feature_l2",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.num_heads = num_heads
        self.max_hops = max_hops
        self.connectivity = connectivity
        self.cost_fn = cost_fn
        self.conv_b = Conv2d(channels, channels, 1, rng=rng)
        self.conv_c = Conv2d(channels, channels, 1, rng=rng)
        self.conv_d = Conv2d(channels, channels, 1, rng=rng)
        self.spath = init_spath_attention(channels, channels, num_heads, rng)
        self.out_proj = Conv2d(channels, channels, 1, rng=rng)
        self.fuse_conv = Conv2d(2 * channels, channels, 1, rng=rng)
        self.fuse_bn = ChannelBatchNorm(channels)

    # -- spatial branch ----------------------------------------------------
    def spatial_attention_map(self, a: T.Tensor) -> T.Tensor:
        """The N x N affinity map; each column is softmax-normalized over i."""
        c, h, w = a.shape
        n = h * w
        br = T.reshape(self.conv_b(a), (c, n))
        cr = T.reshape(self.conv_c(a), (c, n))
        return T.softmax(T.matmul(T.transpose(br), cr), axis=0)

    def spatial_branch(self, a: T.Tensor) -> T.Tensor:
        c, h, w = a.shape
        if c != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {c}")
        s = self.spatial_attention_map(a)
        dr = T.reshape(self.conv_d(a), (c, h * w))
        mixed = T.reshape(T.matmul(dr, s), (c, h, w))
        return T.relu(mixed + a)

    # -- structural branch -------------------------------------------------
    def structural_branch(self, a: T.Tensor, return_weights: bool = False):
        c, h, w = a.shape
        if c != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {c}")
        n = h * w
        if n == 1:
            # no neighbours: attention contributes nothing, residual only
            return (a, {}) if return_weights else a
        graph = build_grid_graph(a, connectivity=self.connectivity, cost_fn=self.cost_fn)
        af = T.reshape(a, (c, n))
        cols = []
        weights = {}
        for node in range(n):
            ps = dijkstra(graph, node, self.max_hops)
            pmat = T.concat([T.reshape(T.tmean(T.take(af, np.array(e.nodes), axis=1),
                                               axis=1, keepdims=True), (1, c))
                             for e in ps.entries], axis=0)
            center = T.reshape(T.take(af, np.array([node]), axis=1), (-1,))
            wrow, out = spath_attention(center, pmat, self.spath)
            cols.append(T.reshape(out, (c, 1)))
            if return_weights:
                weights[node] = wrow
        attended = T.reshape(T.concat(cols, axis=1), (c, h, w))
        result = self.out_proj(attended) + a
        return (result, weights) if return_weights else result

    def __call__(self, a: T.Tensor, training: bool = True) -> T.Tensor:
        sp = self.spatial_branch(a)
        st = self.structural_branch(a)
        fused = self.fuse_conv(T.concat([sp, st], axis=0))
        return self.fuse_bn(fused, training=training)

    def parameters(self):
        out = {}
        for name, sub in (("conv_b", self.conv_b), ("conv_c", self.conv_c),
                          ("conv_d", self.conv_d), ("spath", self.spath),
                          ("out_proj", self.out_proj), ("fuse_conv", self.fuse_conv),
                          ("fuse_bn", self.fuse_bn)):
            out.update(collect_parameters(name, sub))
        return out

    def buffers(self):
        return {f"fuse_bn.{k}": v for k, v in self.fuse_bn.buffers().items()}
