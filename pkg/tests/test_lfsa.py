"""Location-fused windowed attention and decoder fusion chain tests."""

import numpy as np
import pytest

from polypseg import tensor as T
from polypseg.errors import ConfigError
from polypseg.lfsa import DecoderFusion, LocationFusedAttention, window_indices


def make_attn(cq=2, ckv=2, window=1, seed=0, **kw):
    return LocationFusedAttention(cq, ckv, window=window,
                                  rng=np.random.default_rng(seed), **kw)


def attn_oracle(mod, x_q, x_kv):
    """Literal per-pixel transcription of the attention formula."""
    _, h, w = x_q.shape
    rad = mod.window
    side = 2 * rad + 1
    qf = x_q.reshape(x_q.shape[0], -1)
    kvf = x_kv.reshape(x_kv.shape[0], -1)
    q = mod.w_q.data @ qf
    k = mod.w_k.data @ qf
    v = mod.w_v.data @ kvf
    w1 = max(mod.omega1.data.item(), 0.0)
    w2 = max(mod.omega2.data.item(), 0.0)
    c1 = w1 / (mod.eps + w1 + w2)
    c2 = w2 / (mod.eps + w1 + w2)
    out = np.zeros((mod.d_out, h, w))
    for i in range(h):
        for j in range(w):
            scores, vals = [], []
            for a in range(max(0, i - rad), min(h, i + rad + 1)):
                for b in range(max(0, j - rad), min(w, j + rad + 1)):
                    r = mod.rel_pos.data[(a - i + rad) * side + (b - j + rad)]
                    scores.append(q[:, i * w + j] @ (c1 * k[:, a * w + b] + c2 * r))
                    vals.append(v[:, a * w + b])
            scores = np.array(scores)
            e = np.exp(scores - scores.max())
            p = e / e.sum()
            out[:, i, j] = np.array(vals).T @ p
    return out


class TestAttend:
    def test_matches_dense_oracle(self):
        mod = make_attn(cq=1, ckv=1, window=1, seed=1)
        rng = np.random.default_rng(2)
        x_q = rng.normal(size=(1, 4, 4))
        x_kv = rng.normal(size=(1, 4, 4))
        got = mod(T.Tensor(x_q), T.Tensor(x_kv)).data
        assert np.allclose(got, attn_oracle(mod, x_q, x_kv), atol=1e-10)

    def test_matches_dense_oracle_multichannel(self):
        mod = make_attn(cq=3, ckv=2, window=2, seed=3)
        rng = np.random.default_rng(4)
        x_q = rng.normal(size=(3, 5, 5))
        x_kv = rng.normal(size=(2, 5, 5))
        got = mod(T.Tensor(x_q), T.Tensor(x_kv)).data
        assert np.allclose(got, attn_oracle(mod, x_q, x_kv), atol=1e-10)

    def test_omega2_zero_is_content_only(self):
        mod = make_attn(seed=5)
        mod.omega2.data[()] = -1.0  # relu clips to 0
        rng = np.random.default_rng(6)
        x_q = rng.normal(size=(2, 4, 4))
        x_kv = rng.normal(size=(2, 4, 4))
        _, attn = mod(T.Tensor(x_q), T.Tensor(x_kv), return_attn=True)
        # oracle without any positional term
        c1 = 1.0 / (mod.eps + 1.0)
        q = mod.w_q.data @ x_q.reshape(2, -1)
        k = mod.w_k.data @ x_q.reshape(2, -1)
        idx, _, valid = window_indices(4, 4, mod.window)
        for n in range(16):
            js = idx[n][valid[n]]
            s = np.array([q[:, n] @ (c1 * k[:, j]) for j in js])
            e = np.exp(s - s.max())
            assert np.allclose(attn.data[n][valid[n]], e / e.sum(), atol=1e-10)

    def test_omega1_zero_is_content_free(self):
        mod = make_attn(seed=7)
        mod.omega1.data[()] = 0.0
        rng = np.random.default_rng(8)
        x_q = rng.normal(size=(2, 5, 5))
        _, attn = mod(T.Tensor(x_q), T.Tensor(rng.normal(size=(2, 5, 5))), return_attn=True)
        # scores ignore keys, but still depend on the query content; changing
        # only the kv map must leave attention untouched
        _, attn2 = mod(T.Tensor(x_q), T.Tensor(rng.normal(size=(2, 5, 5))), return_attn=True)
        assert np.allclose(attn.data, attn2.data, atol=1e-12)

    def test_softmax_sums_to_one(self):
        mod = make_attn(window=2, seed=9)
        x = np.random.default_rng(10).normal(size=(2, 4, 4))
        _, attn = mod(T.Tensor(x), T.Tensor(x), return_attn=True)
        assert np.allclose(attn.data.sum(axis=1), 1.0, atol=1e-9)

    def test_border_truncation_no_weight_outside(self):
        mod = make_attn(window=2, seed=11)
        x = np.random.default_rng(12).normal(size=(2, 3, 3))
        _, attn = mod(T.Tensor(x), T.Tensor(x), return_attn=True)
        _, _, valid = window_indices(3, 3, 2)
        assert np.all(attn.data[~valid] == 0.0)

    def test_kv_resampled_to_query_grid(self):
        mod = make_attn(cq=2, ckv=3, seed=13)
        x_q = np.random.default_rng(14).normal(size=(2, 4, 4))
        x_kv = np.random.default_rng(15).normal(size=(3, 2, 2))
        out = mod(T.Tensor(x_q), T.Tensor(x_kv))
        assert out.shape == (2, 4, 4)

    def test_translation_equivariance_interior(self):
        mod = make_attn(cq=1, ckv=1, window=1, seed=16)
        rng = np.random.default_rng(17)
        x = rng.normal(size=(1, 6, 6))
        x2 = np.zeros_like(x)
        x2[:, 1:, 1:] = x[:, :-1, :-1]
        y1 = mod(T.Tensor(x), T.Tensor(x)).data
        y2 = mod(T.Tensor(x2), T.Tensor(x2)).data
        assert np.allclose(y2[:, 2:5, 2:5], y1[:, 1:4, 1:4], atol=1e-10)

    def test_coefficients_sum_below_one(self):
        for w1, w2 in [(0.0, 0.0), (1.0, 1.0), (5.0, 0.1), (0.0, 3.0)]:
            mod = make_attn(seed=18)
            mod.omega1.data[()] = w1
            mod.omega2.data[()] = w2
            c1, c2 = mod.mix_coefficients()
            total = c1.item() + c2.item()
            assert total < 1.0
            assert abs(total - (w1 + w2) / (mod.eps + w1 + w2)) < 1e-12

    def test_gradients_all_parameters(self):
        mod = make_attn(cq=1, ckv=1, window=1, seed=19)
        rng = np.random.default_rng(20)
        x_q = T.Tensor(rng.normal(size=(1, 3, 3)))
        x_kv = T.Tensor(rng.normal(size=(1, 3, 3)))
        params = list(mod.parameters().values())

        def f(*ts):
            return T.tsum(mod(x_q, x_kv) ** 2)

        rep = T.grad_check(f, params, tol=1e-4)
        assert rep.passed, rep.max_rel_err

    def test_bad_window_rejected(self):
        with pytest.raises(ConfigError):
            make_attn(window=0)


class TestDecoderFusion:
    def desk_maps(self, seed=21):
        rng = np.random.default_rng(seed)
        shapes = [(128, 2, 2), (64, 4, 4), (32, 8, 8), (16, 16, 16)]
        return [T.Tensor(rng.normal(size=s)) for s in shapes]

    def test_desk_shape_propagation(self):
        maps = self.desk_maps()
        fuse = DecoderFusion((128, 64, 32, 16), out_channels=16,
                             rng=np.random.default_rng(22))
        out = fuse(maps)
        assert out.shape == (16, 16, 16)

    def test_concat_channel_arithmetic(self):
        maps = self.desk_maps()
        fuse = DecoderFusion((128, 64, 32, 16), out_channels=8,
                             rng=np.random.default_rng(23))
        s = [fuse.pairs[i](maps[i], maps[i + 1]) for i in range(3)]
        assert sum(si.shape[0] for si in s) == 128 + 64 + 32
        assert fuse.proj.weight.shape[1] == 224

    def test_identical_maps_shared_params_equal_outputs(self):
        rng = np.random.default_rng(24)
        d = T.Tensor(rng.normal(size=(8, 4, 4)))
        fuse = DecoderFusion((8, 8, 8, 8), out_channels=4, rng=np.random.default_rng(25))
        ref = fuse.pairs[0]
        for pair in fuse.pairs[1:]:
            for name, t in ref.parameters().items():
                pair.parameters()[name].data[...] = t.data
        s = [fuse.pairs[i](d, d) for i in range(3)]
        assert np.allclose(s[0].data, s[1].data, atol=1e-15)
        assert np.allclose(s[1].data, s[2].data, atol=1e-15)

    def test_fewer_than_four_maps_rejected(self):
        fuse = DecoderFusion((8, 8, 8, 8), out_channels=4, rng=np.random.default_rng(26))
        with pytest.raises(ConfigError):
            fuse(self.desk_maps()[:3])

    def test_attention_off_plain_concatenation(self):
        maps = self.desk_maps()
        fuse = DecoderFusion((128, 64, 32, 16), out_channels=16, use_attention=False,
                             rng=np.random.default_rng(27))
        out = fuse(maps)
        assert out.shape == (16, 16, 16)
        assert fuse.pairs == []
