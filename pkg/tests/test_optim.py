"""Adam optimizer tests."""

import numpy as np

from polypseg import tensor as T
from polypseg.optim import Adam


def quadratic_param(value):
    return T.Tensor(np.array(value, dtype=np.float64), requires_grad=True)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # with a constant gradient the bias-corrected first update is exactly
        # lr * g / (|g| + eps') ~= lr * sign(g)
        p = quadratic_param([1.0, -2.0])
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.array([3.0, -0.5])
        opt.step()
        np.testing.assert_allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-7)

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(0)
        p = quadratic_param(rng.normal(size=4))
        start = p.data.copy()
        opt = Adam({"p": p}, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
        m = np.zeros(4)
        v = np.zeros(4)
        x = start.copy()
        for t in range(1, 6):
            g = rng.normal(size=4)
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p.data, x, rtol=1e-12)

    def test_minimizes_quadratic(self):
        p = quadratic_param([5.0, -3.0])
        opt = Adam({"p": p}, lr=0.2)
        for _ in range(300):
            T.reset_tape()
            opt.zero_grad()
            loss = T.tsum(p * p)
            T.backward(loss)
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_zero_grad_clears(self):
        p = quadratic_param([1.0])
        p.grad = np.array([2.0])
        Adam({"p": p}).zero_grad()
        assert p.grad is None

    def test_missing_grad_is_skipped(self):
        p = quadratic_param([1.0])
        opt = Adam({"p": p}, lr=0.5)
        opt.step()  # no grad set
        assert p.data[0] == 1.0

    def test_state_round_trip(self):
        p = quadratic_param([1.0, 2.0])
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.array([0.3, -0.4])
        opt.step()
        state = opt.state()
        opt2 = Adam({"p": p}, lr=0.1)
        opt2.load_state(state)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
        np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])
