"""Loss function tests."""

import numpy as np
import pytest

from polypseg import tensor as T
from polypseg.errors import ShapeError
from polypseg.losses import BCE_CLAMP, DICE_SMOOTH, bce_dice, total_loss


def random_mask(rng, shape=(16, 16)):
    return (rng.uniform(size=shape) > 0.5).astype(np.float64)


class TestBceDice:
    def test_perfect_binary_prediction(self):
        rng = np.random.default_rng(0)
        label = random_mask(rng)
        loss = bce_dice(T.Tensor(label), label).item()
        assert loss < 1e-5

    def test_half_prediction_is_ln2_bce(self):
        label = random_mask(np.random.default_rng(1))
        pred = T.Tensor(np.full_like(label, 0.5))
        loss = bce_dice(pred, label, w=1.0).item()  # pure BCE
        assert abs(loss - np.log(2.0)) < 1e-12

    def test_matches_two_term_oracle(self):
        rng = np.random.default_rng(2)
        label = random_mask(rng, (8, 8))
        pred = rng.uniform(size=(8, 8))
        w = 0.5
        p = np.clip(pred, BCE_CLAMP, 1 - BCE_CLAMP)
        bce = -(label * np.log(p) + (1 - label) * np.log(1 - p)).mean()
        dice = 1 - (2 * (p * label).sum() + DICE_SMOOTH) / (p.sum() + label.sum() + DICE_SMOOTH)
        want = w * bce + (1 - w) * dice
        got = bce_dice(T.Tensor(pred), label, w=w).item()
        assert abs(got - want) < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_dice(T.Tensor(np.ones((4, 4))), np.ones((3, 3)))

    def test_gradient_wrt_logits(self):
        rng = np.random.default_rng(3)
        logits = T.Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        label = random_mask(rng, (5, 5))

        def f(z):
            return bce_dice(T.sigmoid(z), label)

        assert T.grad_check(f, [logits], tol=1e-4).passed


class TestTotalLoss:
    def test_identical_predictions_times_five(self):
        rng = np.random.default_rng(4)
        label = random_mask(rng, (8, 8))
        pred = T.Tensor(rng.uniform(size=(8, 8)))
        single = bce_dice(pred, label).item()
        total = total_loss([pred, pred, pred, pred], pred, label).item()
        assert abs(total - 5 * single) < 1e-10

    def test_perfect_predictions_tiny(self):
        label = random_mask(np.random.default_rng(5))
        p = T.Tensor(label)
        assert total_loss([p, p, p, p], p, label).item() < 5e-5

    def test_matches_summing_loop_oracle(self):
        rng = np.random.default_rng(6)
        label = random_mask(rng, (6, 6))
        preds = [T.Tensor(rng.uniform(size=(6, 6))) for _ in range(5)]
        want = sum(bce_dice(p, label).item() for p in preds)
        got = total_loss(preds[:4], preds[4], label).item()
        assert abs(got - want) < 1e-10

    def test_gradient_through_deep_supervision(self):
        rng = np.random.default_rng(7)
        label = random_mask(rng, (4, 4))
        logits = [T.Tensor(rng.normal(size=(4, 4)), requires_grad=True) for _ in range(5)]

        def f(*zs):
            preds = [T.sigmoid(z) for z in zs]
            return total_loss(preds[:4], preds[4], label)

        assert T.grad_check(f, logits, tol=1e-4, max_coords=8).passed
