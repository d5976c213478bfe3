"""Weighted grid graphs over feature maps and shortest-path attention.

A feature map (C, H, W) becomes a graph with one node per spatial location,
edges between 4- or 8-neighbours, and edge costs either uniform or the L2
distance between the endpoint feature vectors. Shortest paths are found with
Dijkstra's algorithm; ties are broken toward the lexicographically smallest
node-id sequence, which makes path extraction fully deterministic.

The attention over a node's shortest-path neighbourhood uses the GAT-style
concatenated score per head,

    alpha_j = softmax_j( leaky_relu( a . [W h_i || W p_j] ) ),

averaged over heads and applied to head-averaged projected path features.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError

_COST_TOL = 1e-12


@dataclass(frozen=True)
class GridGraph:
    """Immutable weighted graph over the spatial locations of a feature map."""

    num_nodes: int
    height: int
    width: int
    coords: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[tuple[int, float], ...], ...]  # per node: (neighbour, cost)
    node_features: np.ndarray  # (num_nodes, C), read-only


@dataclass(frozen=True)
class PathEntry:
    target: int
    hops: int
    nodes: tuple[int, ...]  # starts at center, ends at target
    cost: float


@dataclass(frozen=True)
class PathSet:
    center: int
    entries: tuple[PathEntry, ...]


def build_grid_graph(x, connectivity: int = 4, cost_fn: str = "feature_l2") -> GridGraph:
    """One node per spatial location of a (C, H, W) map, edges between grid neighbours."""
    data = x.data if isinstance(x, T.Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim != 3:
        raise ShapeError(f"build_grid_graph expects (C,H,W); got {data.shape}")
    if connectivity not in (4, 8):
        raise ConfigError(f"connectivity must be 4 or 8; got {connectivity}")
    if cost_fn not in ("feature_l2", "uniform"):
        raise ConfigError(f"unknown cost_fn {cost_fn!r}")
    c, h, w = data.shape
    n = h * w
    feats = data.reshape(c, n).T.copy()  # (N, C)
    feats.setflags(write=False)
    coords = tuple((i // w, i % w) for i in range(n))
    if connectivity == 4:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    adjacency = []
    for i in range(n):
        r, cc = coords[i]
        nbrs = []
        for dr, dc in offsets:
            rr, ccc = r + dr, cc + dc
            if 0 <= rr < h and 0 <= ccc < w:
                j = rr * w + ccc
                if cost_fn == "uniform":
                    cost = 1.0
                else:
                    cost = float(np.linalg.norm(feats[i] - feats[j]))
                nbrs.append((j, cost))
        adjacency.append(tuple(sorted(nbrs)))
    return GridGraph(num_nodes=n, height=h, width=w, coords=coords,
                     adjacency=tuple(adjacency), node_features=feats)


def _hop_distances(g: GridGraph, source: int) -> np.ndarray:
    """BFS hop counts on the unweighted graph; -1 for unreachable."""
    hops = np.full(g.num_nodes, -1, dtype=np.int64)
    hops[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for u in frontier:
            for v, _ in g.adjacency[u]:
                if hops[v] < 0:
                    hops[v] = hops[u] + 1
                    nxt.append(v)
        frontier = nxt
    return hops


def dijkstra(g: GridGraph, source: int, max_hops: int) -> PathSet:
    """Shortest weighted paths from source to every node within max_hops hops.

    Hop eligibility is measured on the unweighted grid (BFS), while path costs
    are minimized over all paths. Among equal-cost paths the lexicographically
    smallest node sequence is kept.
    """
    if not 0 <= source < g.num_nodes:
        raise ShapeError(f"source {source} out of range for {g.num_nodes} nodes")
    if max_hops < 1:
        raise ConfigError(f"max_hops must be >= 1; got {max_hops}")
    best_cost = {source: 0.0}
    best_path: dict[int, tuple[int, ...]] = {source: (source,)}
    heap: list[tuple[float, tuple[int, ...], int]] = [(0.0, (source,), source)]
    settled: set[int] = set()
    while heap:
        cost, path, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        best_cost[u], best_path[u] = cost, path
        for v, w in g.adjacency[u]:
            if v in settled:
                continue
            nc = cost + w
            np_ = path + (v,)
            old = best_cost.get(v)
            if old is None or nc < old - _COST_TOL or (abs(nc - old) <= _COST_TOL
                                                      and np_ < best_path[v]):
                best_cost[v] = nc
                best_path[v] = np_
                heapq.heappush(heap, (nc, np_, v))
    hops = _hop_distances(g, source)
    entries = []
    for t in range(g.num_nodes):
        if t == source or hops[t] < 0 or hops[t] > max_hops:
            continue
        entries.append(PathEntry(target=t, hops=int(hops[t]),
                                 nodes=best_path[t], cost=best_cost[t]))
    return PathSet(center=source, entries=tuple(entries))


def path_features(g: GridGraph, p: PathSet, pooling: str = "mean") -> np.ndarray:
    """Per-target path feature: mean of node features along the stored path."""
    if pooling != "mean":
        raise ConfigError(f"unknown pooling {pooling!r}")
    if not p.entries:
        return np.zeros((0, g.node_features.shape[1]))
    return np.stack([g.node_features[list(e.nodes)].mean(axis=0) for e in p.entries])


@dataclass
class SpathAttentionParams:
    """Per-head projection and score vectors for shortest-path attention."""

    heads: list[dict[str, T.Tensor]] = field(default_factory=list)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def parameters(self):
        out = {}
        for k, head in enumerate(self.heads):
            for name, t in head.items():
                out[f"head{k}.{name}"] = t
        return out


def init_spath_attention(in_dim: int, out_dim: int, num_heads: int,
                         rng: np.random.Generator) -> SpathAttentionParams:
    if num_heads < 1:
        raise ConfigError(f"num_heads must be >= 1; got {num_heads}")
    heads = []
    scale = 1.0 / np.sqrt(in_dim)
    for _ in range(num_heads):
        heads.append({
            "w": T.Tensor(rng.normal(scale=scale, size=(out_dim, in_dim)), requires_grad=True),
            "a_self": T.Tensor(rng.normal(scale=scale, size=(1, out_dim)), requires_grad=True),
            "a_path": T.Tensor(rng.normal(scale=scale, size=(1, out_dim)), requires_grad=True),
        })
    return SpathAttentionParams(heads=heads)


def spath_attention(center_feat: T.Tensor, path_feats, params: SpathAttentionParams,
                    leaky_slope: float = 0.2):
    """Attention of a center node over its shortest-path neighbourhood.

    Returns (edge_weights, output): edge_weights is the head-mean attention row
    (one weight per target, renormalized to sum to 1), output the aggregated
    head-averaged projected path feature. Both are differentiable Tensors.
    """
    if params.num_heads < 1:
        raise ConfigError("spath_attention requires at least one head")
    if isinstance(path_feats, (list, tuple)):
        if not path_feats:
            raise ShapeError("spath_attention requires at least one path feature")
        lens = {T.as_tensor(f).size for f in path_feats}
        if len(lens) > 1:
            raise ConfigError(f"ragged path feature lengths: {sorted(lens)}")
        rows = [T.reshape(T.as_tensor(f), (1, -1)) for f in path_feats]
        pmat = T.concat(rows, axis=0)  # (T, C)
    else:
        pmat = T.as_tensor(path_feats)
    center = T.reshape(T.as_tensor(center_feat), (-1, 1))  # (C, 1)
    if pmat.shape[1] != center.shape[0]:
        raise ConfigError(f"center length {center.shape[0]} != path feature length {pmat.shape[1]}")

    alphas = []
    values = []
    for head in params.heads:
        wh = T.matmul(head["w"], center)                      # (d, 1)
        wp = T.matmul(head["w"], T.transpose(pmat))           # (d, T)
        score = T.matmul(head["a_self"], wh) + T.matmul(head["a_path"], wp)  # (1, T)
        alphas.append(T.softmax(T.leaky_relu(score, leaky_slope), axis=1))
        values.append(wp)
    k = float(params.num_heads)
    mean_alpha = alphas[0] if len(alphas) == 1 else T.concat(alphas, axis=0)
    if len(alphas) > 1:
        mean_alpha = T.tmean(mean_alpha, axis=0, keepdims=True)
    weights = mean_alpha / T.tsum(mean_alpha)                 # renormalized row (1, T)
    vbar = values[0]
    for v in values[1:]:
        vbar = vbar + v
    vbar = vbar * (1.0 / k)                                   # (d, T)
    out = T.matmul(vbar, T.transpose(weights))                # (d, 1)
    return T.reshape(weights, (-1,)), T.reshape(out, (-1,))


def dump_graph(g: GridGraph, pathsets: tuple[PathSet, ...] | list[PathSet] = ()) -> str:
    """Plain-text listing of the graph (one edge per line) and any path sets."""
    lines = [f"graph nodes={g.num_nodes} grid={g.height}x{g.width}"]
    for i, nbrs in enumerate(g.adjacency):
        for j, cost in nbrs:
            if i < j:  # undirected: list each edge once
                lines.append(f"edge {i} {j} {cost:.9g}")
    for ps in pathsets:
        for e in ps.entries:
            seq = "->".join(str(n) for n in e.nodes)
            lines.append(f"path {ps.center} {e.target} hops={e.hops} cost={e.cost:.9g} {seq}")
    return "\n".join(lines) + "\n"
