"""Feedback gates: pooling, conv, squashing, resize and combination."""
import numpy as np
import pytest

from rignet import ops
from rignet.gating import (
    INTERACTIONS,
    POOLINGS,
    GateParams,
    gate_forward,
    init_gate,
    multirange_gate_forward,
)
from rignet.gradcheck import TOLERANCE, grad_check
from rignet.tensor import ShapeError, Tensor


def _zero_gate(c_src, c_tgt, interaction="mul_sigmoid", pooling="avg", bias=0.0):
    return GateParams(
        Tensor(np.zeros((c_tgt, c_src, 3, 3))), Tensor(np.full(c_tgt, bias)), interaction, pooling
    )


@pytest.fixture
def pair(rng):
    f_out = Tensor(rng.normal(size=(2, 4, 4, 4)))
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    return f_out, x


class TestClosedForms:
    def test_half_open(self, pair):
        f_out, x = pair
        out = gate_forward(f_out, x, _zero_gate(4, 3))
        np.testing.assert_array_equal(out.data, 0.5 * x.data)

    @pytest.mark.parametrize("pooling", POOLINGS)
    def test_saturated_open(self, pair, pooling):
        f_out, x = pair
        out = gate_forward(f_out, x, _zero_gate(4, 3, pooling=pooling, bias=50.0))
        np.testing.assert_allclose(out.data, x.data, rtol=0, atol=1e-12)

    def test_add_relu_zero_map(self, pair):
        f_out, x = pair
        xp = Tensor(np.abs(x.data))
        out = gate_forward(f_out, xp, _zero_gate(4, 3, "add_relu"))
        np.testing.assert_array_equal(out.data, xp.data)

    def test_tanh_closed_form(self, pair):
        f_out, x = pair
        out = gate_forward(f_out, x, _zero_gate(4, 3, "mul_tanh", bias=0.3))
        np.testing.assert_allclose(out.data, np.tanh(0.3) * x.data, rtol=1e-15)

    def test_matches_hand_composition(self, pair):
        f_out, x = pair
        g = init_gate(4, 3, "mul_sigmoid", "avg", seed=5)
        g.bias.data[:] = [0.1, -0.2, 0.3]
        m = ops.pool2d(f_out, "avg", 2, 2)
        m = ops.conv2d(m, g.weight, g.bias, stride=1, pad=1)
        m = ops.bilinear_upsample(ops.sigmoid(m), 8, 8)
        np.testing.assert_array_equal(gate_forward(f_out, x, g).data, ops.mul(m, x).data)


class TestProperties:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("pooling", POOLINGS)
    def test_sigmoid_gate_only_attenuates(self, seed, pooling):
        r = np.random.default_rng(seed)
        f_out = Tensor(r.normal(size=(1, 3, 6, 6)))
        x = Tensor(r.normal(size=(1, 2, 12, 12)))
        g = init_gate(3, 2, "mul_sigmoid", pooling, seed=seed)
        g.bias.data[:] = r.normal(scale=3, size=2)
        ratio = gate_forward(f_out, x, g).data / x.data
        pos = x.data > 0
        assert (ratio[pos] >= 0).all() and (ratio[pos] <= 1).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_add_relu_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        g = init_gate(3, 2, "add_relu", "max", seed=seed)
        out = gate_forward(Tensor(r.normal(size=(1, 3, 4, 4))), Tensor(r.normal(size=(1, 2, 8, 8))), g)
        assert (out.data >= 0).all()

    @pytest.mark.parametrize("interaction", INTERACTIONS)
    @pytest.mark.parametrize("pooling", POOLINGS)
    @pytest.mark.parametrize("src_hw,tgt_hw", [((4, 4), (8, 8)), ((6, 6), (6, 6)), ((2, 2), (16, 16)), ((4, 6), (7, 5))])
    def test_output_matches_block_input_shape(self, interaction, pooling, src_hw, tgt_hw, rng):
        g = init_gate(3, 2, interaction, pooling, seed=1)
        out = gate_forward(Tensor(rng.normal(size=(1, 3, *src_hw))), Tensor(rng.normal(size=(1, 2, *tgt_hw))), g)
        assert out.shape == (1, 2, *tgt_hw)

    @pytest.mark.parametrize("interaction", INTERACTIONS)
    @pytest.mark.parametrize("pooling", ["none", "avg"])
    def test_gradients(self, interaction, pooling, rng):
        g = init_gate(3, 2, interaction, pooling, seed=2)
        g.bias.data[:] = 0.37
        f_out = Tensor(rng.normal(size=(1, 3, 4, 4)))
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))
        err = grad_check(lambda a, b, w, c: gate_forward(a, b, GateParams(w, c, interaction, pooling)),
                         [f_out, x, g.weight, g.bias])
        assert err < TOLERANCE

    def test_channel_mismatch_rejected(self, rng):
        g = init_gate(3, 2)
        with pytest.raises(ShapeError):
            gate_forward(Tensor(rng.normal(size=(1, 4, 4, 4))), Tensor(rng.normal(size=(1, 2, 8, 8))), g)
        with pytest.raises(ShapeError):
            gate_forward(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(1, 5, 8, 8))), g)


class TestInitGate:
    def test_seed_determinism(self):
        a, b = init_gate(4, 3, seed=9), init_gate(4, 3, seed=9)
        np.testing.assert_array_equal(a.weight.data, b.weight.data)

    def test_fresh_gate_halves_on_average(self, rng):
        scales = []
        for seed in range(20):
            g = init_gate(8, 4, "mul_sigmoid", "avg", seed=seed)
            f_out = Tensor(np.abs(rng.normal(size=(1, 8, 8, 8))))
            x = Tensor(np.ones((1, 4, 16, 16)))
            scales.append(gate_forward(f_out, x, g).data.mean())
        assert abs(np.mean(scales) - 0.5) < 0.2

    def test_multirange_kernel_doubles_input_channels(self):
        g = init_gate(5, 3, multirange=True, c_long=7)
        assert g.weight.shape == (3, 10, 3, 3)
        assert g.adapter_weight.shape == (5, 7, 1, 1)
        assert g.c_src == 5 and g.multirange

    def test_unknown_kinds_rejected(self):
        with pytest.raises(ValueError):
            init_gate(2, 2, interaction="mul_relu")
        with pytest.raises(ValueError):
            init_gate(2, 2, pooling="median")


class TestMultiRange:
    def test_shape_contract(self, rng):
        g = init_gate(128, 64, multirange=True, c_long=128, seed=0)
        out = multirange_gate_forward(
            Tensor(rng.normal(size=(1, 128, 8, 8))),
            Tensor(rng.normal(size=(1, 128, 4, 4))),
            Tensor(rng.normal(size=(1, 64, 16, 16))),
            g,
        )
        assert out.shape == (1, 64, 16, 16)

    def test_half_open_regardless_of_long_range(self, rng):
        g = init_gate(3, 2, multirange=True, c_long=4)
        g.weight.data[:] = 0
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))
        a = multirange_gate_forward(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(1, 4, 2, 2))), x, g)
        np.testing.assert_array_equal(a.data, 0.5 * x.data)

    def test_dead_long_range_reduces_to_short_gate(self, rng):
        g = init_gate(3, 2, "mul_tanh", "max", multirange=True, c_long=4, seed=3)
        g.adapter_weight.data[:] = 0
        g.weight.data[:, 3:] = 0
        short = GateParams(Tensor(g.weight.data[:, :3]), g.bias, "mul_tanh", "max")
        f_out = Tensor(rng.normal(size=(1, 3, 4, 4)))
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))
        got = multirange_gate_forward(f_out, Tensor(rng.normal(size=(1, 4, 2, 2))), x, g)
        np.testing.assert_allclose(got.data, gate_forward(f_out, x, short).data, rtol=0, atol=1e-15)

    def test_plain_gate_refuses_multirange_params(self, rng):
        g = init_gate(3, 2, multirange=True)
        with pytest.raises(ValueError):
            gate_forward(Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(1, 2, 8, 8))), g)

    def test_gradients(self, rng):
        g = init_gate(2, 2, "mul_sigmoid", "avg", multirange=True, c_long=3, seed=4)
        f_out = Tensor(rng.normal(size=(1, 2, 4, 4)))
        f_c = Tensor(rng.normal(size=(1, 3, 2, 2)))
        x = Tensor(rng.normal(size=(1, 2, 8, 8)))

        def fn(a, c, b, w, bias, aw, ab):
            return multirange_gate_forward(a, c, b, GateParams(w, bias, "mul_sigmoid", "avg", aw, ab))

        err = grad_check(fn, [f_out, f_c, x, g.weight, g.bias, g.adapter_weight, g.adapter_bias])
        assert err < TOLERANCE
