"""Tests for grid graphs, Dijkstra, path features, and shortest-path attention."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypseg import graphs as G
from polypseg import tensor as T
from polypseg.errors import ConfigError


def enumerate_shortest(adjacency, source, target):
    """Oracle: cheapest simple path by exhaustive enumeration."""
    n = len(adjacency)
    best = (np.inf, None)
    stack = [(source, (source,), 0.0)]
    while stack:
        u, path, cost = stack.pop()
        if u == target:
            if cost < best[0] - 1e-12 or (abs(cost - best[0]) <= 1e-12
                                          and (best[1] is None or path < best[1])):
                best = (cost, path)
            continue
        for v, w in adjacency[u]:
            if v not in path:
                stack.append((v, path + (v,), cost + w))
    return best


def random_graph(rng, n):
    """Random connected undirected graph with <= n nodes as an adjacency table."""
    costs = {}
    adj = [[] for _ in range(n)]
    # random spanning tree for connectivity, then random extra edges
    order = rng.permutation(n)
    for i in range(1, n):
        a, b = int(order[i]), int(order[rng.integers(0, i)])
        costs[(min(a, b), max(a, b))] = float(rng.uniform(0, 5))
    for _ in range(n):
        a, b = int(rng.integers(0, n)), int(rng.integers(0, n))
        if a != b:
            costs.setdefault((min(a, b), max(a, b)), float(rng.uniform(0, 5)))
    for (a, b), w in costs.items():
        adj[a].append((b, w))
        adj[b].append((a, w))
    return tuple(tuple(sorted(x)) for x in adj)


def graph_from_adjacency(adj):
    n = len(adj)
    return G.GridGraph(num_nodes=n, height=1, width=n,
                       coords=tuple((0, i) for i in range(n)),
                       adjacency=adj, node_features=np.zeros((n, 1)))


class TestBuildGridGraph:
    def test_single_node(self):
        g = G.build_grid_graph(np.zeros((3, 1, 1)))
        assert g.num_nodes == 1
        assert g.adjacency == ((),)

    def test_2x2_four_connectivity(self):
        g = G.build_grid_graph(np.zeros((2, 2, 2)), connectivity=4)
        assert g.num_nodes == 4
        n_edges = sum(len(a) for a in g.adjacency) // 2
        assert n_edges == 4

    def test_constant_features_zero_cost(self):
        g = G.build_grid_graph(np.full((3, 3, 3), 1.7), cost_fn="feature_l2")
        assert all(cost == 0.0 for nbrs in g.adjacency for _, cost in nbrs)

    def test_symmetric_adjacency(self):
        rng = np.random.default_rng(0)
        g = G.build_grid_graph(rng.normal(size=(2, 3, 4)), connectivity=8)
        for i, nbrs in enumerate(g.adjacency):
            for j, cost in nbrs:
                back = dict(g.adjacency[j])
                assert back[i] == cost

    def test_feature_l2_cost(self):
        x = np.zeros((2, 1, 2))
        x[:, 0, 1] = [3.0, 4.0]
        g = G.build_grid_graph(x, cost_fn="feature_l2")
        assert g.adjacency[0][0] == (1, 5.0)

    def test_bad_connectivity(self):
        with pytest.raises(ConfigError):
            G.build_grid_graph(np.zeros((1, 2, 2)), connectivity=6)


class TestDijkstra:
    def test_single_edge(self):
        adj = (((1, 2.5),), ((0, 2.5),))
        ps = G.dijkstra(graph_from_adjacency(adj), 0, max_hops=1)
        assert len(ps.entries) == 1
        e = ps.entries[0]
        assert e.target == 1 and e.cost == 2.5 and e.nodes == (0, 1)

    def test_triangle_detour(self):
        # a-b cost 5, a-c cost 1, c-b cost 1 -> a->b via c, cost 2
        adj = (((1, 5.0), (2, 1.0)), ((0, 5.0), (2, 1.0)), ((0, 1.0), (1, 1.0)))
        ps = G.dijkstra(graph_from_adjacency(adj), 0, max_hops=2)
        e = {en.target: en for en in ps.entries}[1]
        assert e.nodes == (0, 2, 1) and abs(e.cost - 2.0) < 1e-12

    def test_uniform_costs_cost_equals_hops(self):
        g = G.build_grid_graph(np.zeros((1, 4, 5)), connectivity=4, cost_fn="uniform")
        ps = G.dijkstra(g, 7, max_hops=3)
        for e in ps.entries:
            assert abs(e.cost - e.hops) < 1e-12

    def test_hop_limit_omits_far_nodes(self):
        g = G.build_grid_graph(np.zeros((1, 1, 6)), connectivity=4, cost_fn="uniform")
        ps = G.dijkstra(g, 0, max_hops=2)
        assert sorted(e.target for e in ps.entries) == [1, 2]

    def test_path_cost_equals_edge_sum(self):
        rng = np.random.default_rng(1)
        g = G.build_grid_graph(rng.normal(size=(3, 3, 3)), cost_fn="feature_l2")
        ps = G.dijkstra(g, 4, max_hops=3)
        for e in ps.entries:
            total = 0.0
            for a, b in zip(e.nodes, e.nodes[1:]):
                total += dict(g.adjacency[a])[b]
            assert abs(total - e.cost) < 1e-9

    def test_paths_start_center_end_target(self):
        g = G.build_grid_graph(np.zeros((1, 3, 3)), cost_fn="uniform")
        ps = G.dijkstra(g, 0, max_hops=4)
        for e in ps.entries:
            assert e.nodes[0] == 0 and e.nodes[-1] == e.target

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_enumeration_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        adj = random_graph(rng, n)
        g = graph_from_adjacency(adj)
        ps = G.dijkstra(g, 0, max_hops=n)
        got = {e.target: e for e in ps.entries}
        for t in range(1, n):
            cost, path = enumerate_shortest(adj, 0, t)
            assert abs(got[t].cost - cost) < 1e-9
            assert got[t].nodes == path

    def test_deterministic_tie_breaking(self):
        g = G.build_grid_graph(np.zeros((1, 3, 3)), cost_fn="uniform")
        a = G.dijkstra(g, 4, max_hops=2)
        b = G.dijkstra(g, 4, max_hops=2)
        assert a == b
        # diagonal neighbour 0 from center 4: two equal-cost 2-hop routes
        e = {en.target: en for en in a.entries}[0]
        assert e.nodes == (4, 1, 0)  # lexicographically smallest

    def test_bad_source(self):
        g = G.build_grid_graph(np.zeros((1, 2, 2)))
        with pytest.raises(Exception):
            G.dijkstra(g, 9, max_hops=1)


class TestPathFeatures:
    def test_single_hop_path_mean(self):
        rng = np.random.default_rng(2)
        g = G.build_grid_graph(rng.normal(size=(4, 1, 2)), cost_fn="uniform")
        ps = G.dijkstra(g, 0, max_hops=1)
        feats = G.path_features(g, ps)
        want = (g.node_features[0] + g.node_features[1]) / 2.0
        assert np.allclose(feats[0], want)

    def test_three_node_path_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        g = G.build_grid_graph(rng.normal(size=(3, 1, 3)), cost_fn="uniform")
        ps = G.dijkstra(g, 0, max_hops=2)
        feats = G.path_features(g, ps)
        e = {en.target: i for i, en in enumerate(ps.entries)}
        acc = np.zeros(3)
        for node in (0, 1, 2):
            acc += g.node_features[node]
        assert np.allclose(feats[e[2]], acc / 3.0, atol=1e-12)

    def test_empty_pathset(self):
        g = G.build_grid_graph(np.zeros((2, 1, 1)))
        ps = G.dijkstra(g, 0, max_hops=1)
        assert G.path_features(g, ps).shape == (0, 2)


class TestSpathAttention:
    def _setup(self, seed, c=5, t=4, heads=3):
        rng = np.random.default_rng(seed)
        params = G.init_spath_attention(c, c, heads, rng)
        center = T.Tensor(rng.normal(size=c))
        paths = T.Tensor(rng.normal(size=(t, c)))
        return params, center, paths, rng

    def test_single_head_weights_are_softmax(self):
        params, center, paths, _ = self._setup(0, heads=1)
        weights, _ = G.spath_attention(center, paths, params)
        h = params.heads[0]
        wh = h["w"].data @ center.data[:, None]
        wp = h["w"].data @ paths.data.T
        score = (h["a_self"].data @ wh + h["a_path"].data @ wp).ravel()
        score = np.where(score > 0, score, 0.2 * score)
        e = np.exp(score - score.max())
        assert np.allclose(weights.data, e / e.sum(), atol=1e-12)

    def test_head_mean_matches_independent_recompute(self):
        params, center, paths, _ = self._setup(1, heads=4)
        weights, _ = G.spath_attention(center, paths, params)
        per_head = []
        for h in params.heads:
            wh = h["w"].data @ center.data[:, None]
            wp = h["w"].data @ paths.data.T
            score = (h["a_self"].data @ wh + h["a_path"].data @ wp).ravel()
            score = np.where(score > 0, score, 0.2 * score)
            e = np.exp(score - score.max())
            per_head.append(e / e.sum())
        mean = np.mean(per_head, axis=0)
        assert np.allclose(weights.data, mean / mean.sum(), atol=1e-12)

    def test_weights_sum_to_one(self):
        params, center, paths, _ = self._setup(2)
        weights, _ = G.spath_attention(center, paths, params)
        assert abs(weights.data.sum() - 1.0) < 1e-9

    def test_permutation_equivariance(self):
        params, center, paths, rng = self._setup(3)
        w1, o1 = G.spath_attention(center, paths, params)
        perm = rng.permutation(paths.shape[0])
        w2, o2 = G.spath_attention(center, T.Tensor(paths.data[perm]), params)
        assert np.allclose(w2.data, w1.data[perm], atol=1e-12)
        assert np.allclose(o2.data, o1.data, atol=1e-12)

    def test_gradients_pass(self):
        params, center, paths, _ = self._setup(4, c=3, t=3, heads=2)
        tensors = list(params.parameters().values())

        def f(*ts):
            _, out = G.spath_attention(center, paths, params)
            return T.tsum(out * out)

        assert T.grad_check(f, tensors, tol=1e-4).passed

    def test_ragged_vectors_rejected(self):
        params, center, _, _ = self._setup(5)
        with pytest.raises(ConfigError):
            G.spath_attention(center, [T.Tensor(np.ones(5)), T.Tensor(np.ones(4))], params)

    def test_zero_heads_rejected(self):
        with pytest.raises(ConfigError):
            G.init_spath_attention(3, 3, 0, np.random.default_rng(0))

    @given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=100))
    @settings(max_examples=25, deadline=None)
    def test_per_head_rows_normalized(self, heads, seed):
        params, center, paths, _ = self._setup(seed, heads=heads)
        weights, _ = G.spath_attention(center, paths, params)
        assert abs(weights.data.sum() - 1.0) < 1e-9
        assert np.all(weights.data > 0)


class TestDump:
    def test_dump_lists_each_edge_once(self):
        g = G.build_grid_graph(np.zeros((1, 2, 2)), cost_fn="uniform")
        ps = G.dijkstra(g, 0, max_hops=2)
        text = G.dump_graph(g, [ps])
        assert text.count("edge ") == 4
        assert "path 0 3" in text
