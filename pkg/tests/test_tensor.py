"""The recording tape and reverse sweep."""
import numpy as np
import pytest

from rignet import ops
from rignet.gradcheck import grad_check
from rignet.tensor import ShapeError, Tape, Tensor, active_tape, backward


class TestTensor:
    def test_copies_input(self):
        a = np.zeros((2, 2))
        t = Tensor(a)
        a[0, 0] = 1.0
        assert t.data[0, 0] == 0.0

    def test_float64(self):
        assert Tensor(np.ones(3, dtype=np.float32)).data.dtype == np.float64

    def test_item_needs_single_element(self):
        assert Tensor(np.array([2.5])).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor(np.ones(2)).item()

    def test_hash_by_identity(self):
        a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
        assert len({a: 1, b: 2}) == 2


class TestTape:
    def test_context_activation(self):
        assert active_tape() is None
        with Tape() as tape:
            assert active_tape() is tape
        assert active_tape() is None

    def test_untracked_ops_not_recorded(self):
        with Tape() as tape:
            ops.mul(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))))
        assert tape.nodes == []

    def test_shared_weight_gradients_accumulate(self):
        w = Tensor(np.full((1, 1, 1, 1), 3.0), requires_grad=True)
        x = Tensor(np.full((1, 1, 1, 1), 2.0))
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(ops.mul(x, w), w))
        # d(x w^2)/dw = 2 x w
        assert backward(tape, loss)[w].item() == pytest.approx(12.0)

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            y = ops.mul(w, w)
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_unreached_leaf_gets_no_entry(self):
        w = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        u = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with Tape() as tape:
            loss = ops.sum_all(ops.relu(w))
        grads = backward(tape, loss)
        assert u not in grads

    def test_weighted_sum_gradient_is_weights(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        wts = rng.normal(size=(1, 2, 3, 3))
        with Tape() as tape:
            loss = ops.weighted_sum(x, wts)
        np.testing.assert_array_equal(backward(tape, loss)[x], wts)


class TestGradCheckHarness:
    def test_detects_wrong_gradient(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 3, 3))
        assert grad_check(ops.tanh, [Tensor(x)], corrupt=1e-2) > 1e-4

    def test_accepts_correct_gradient(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 3, 3))
        assert grad_check(ops.tanh, [Tensor(x)]) < 1e-6
