"""Forward values and adjoints of the autodiff core."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lunetkit.diffcore as dc
from lunetkit.diffcore import Tape, Tensor, backward, check_gradients
from lunetkit.errors import (
    IoFailure,
    NotScalarLoss,
    OddSpatialDim,
    OutputTooSmall,
    ShapeMismatch,
)


def t64(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestElementwise:
    def test_add_sub_mul_div(self):
        x = t64([1.0, 2.0, 3.0])
        y = t64([4.0, 5.0, 6.0])
        assert np.array_equal(dc.add(x, y).data, [5.0, 7.0, 9.0])
        assert np.array_equal(dc.sub(x, y).data, [-3.0, -3.0, -3.0])
        assert np.array_equal(dc.mul(x, y).data, [4.0, 10.0, 18.0])
        assert np.array_equal(dc.div(y, x).data, [4.0, 2.5, 2.0])

    def test_scalar_operand(self):
        x = t64([1.0, 2.0])
        s = t64([10.0])
        assert np.array_equal(dc.mul(x, s).data, [10.0, 20.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dc.add(t64(np.zeros((2, 3))), t64(np.zeros((3, 2))))

    def test_relu_abs_minmax(self):
        x = t64([-1.0, 0.0, 2.0])
        assert np.array_equal(dc.relu(x).data, [0.0, 0.0, 2.0])
        assert np.array_equal(dc.absolute(x).data, [1.0, 0.0, 2.0])
        y = t64([0.5, -3.0, 1.0])
        assert np.array_equal(dc.maximum(x, y).data, [0.5, 0.0, 2.0])
        assert np.array_equal(dc.minimum(x, y).data, [-1.0, -3.0, 1.0])

    def test_sigmoid_midpoint(self):
        assert dc.sigmoid(t64([0.0])).data[0] == pytest.approx(0.5, abs=1e-15)


class TestShapeOps:
    def test_reduce_sum_mean(self):
        x = t64([[1.0, 2.0], [3.0, 4.0]])
        assert dc.reduce_sum(x).item() == 10.0
        assert dc.reduce_mean(x).item() == 2.5

    def test_reshape_and_slice(self):
        x = t64(np.arange(6.0).reshape(2, 3))
        assert dc.reshape(x, (3, 2)).shape == (3, 2)
        sl = dc.slice_axis(x, axis=1, start=1, stop=3)
        assert np.array_equal(sl.data, [[1.0, 2.0], [4.0, 5.0]])

    def test_concat(self):
        a = t64([[1.0], [2.0]])
        b = t64([[3.0], [4.0]])
        assert np.array_equal(dc.concat([a, b], axis=1).data, [[1.0, 3.0], [2.0, 4.0]])

    def test_concat_channels(self):
        a = t64(np.ones((1, 2, 3, 3)))
        b = t64(np.zeros((1, 1, 3, 3)))
        out = dc.concat_channels(a, b)
        assert out.shape == (1, 3, 3, 3)
        assert np.array_equal(out.data[0, 2], np.zeros((3, 3)))


class TestDense:
    def test_worked_example(self):
        x = t64([[1.0, 2.0]])
        w = t64([[1.0, 1.0], [0.0, 1.0]])
        b = t64([0.0, 0.0])
        assert np.array_equal(dc.dense(x, w, b).data, [[3.0, 2.0]])

    def test_bias_only(self):
        x = t64(np.zeros((2, 3)))
        w = t64(np.zeros((4, 3)))
        b = t64([1.0, 2.0, 3.0, 4.0])
        out = dc.dense(x, w, b)
        assert np.array_equal(out.data, np.tile([1.0, 2.0, 3.0, 4.0], (2, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dc.dense(t64(np.zeros((2, 3))), t64(np.zeros((3, 4))), t64(np.zeros(4)))


class TestConv:
    def test_identity_kernel(self):
        x = t64(np.random.default_rng(0).normal(size=(1, 1, 5, 5)))
        w = t64(np.ones((1, 1, 1, 1)))
        b = t64([0.0])
        assert np.allclose(dc.conv2d(x, w, b).data, x.data)

    def test_box_kernel_interior(self):
        x = t64(np.full((1, 1, 6, 6), 2.0))
        w = t64(np.ones((1, 1, 3, 3)))
        b = t64([0.0])
        out = dc.conv2d(x, w, b)
        assert out.shape == (1, 1, 6, 6)
        assert np.allclose(out.data[0, 0, 1:-1, 1:-1], 18.0)

    def test_zero_input_gives_bias(self):
        x = t64(np.zeros((1, 2, 4, 4)))
        w = t64(np.zeros((3, 2, 3, 3)))
        b = t64([1.0, -1.0, 0.5])
        out = dc.conv2d(x, w, b)
        for c, v in enumerate([1.0, -1.0, 0.5]):
            assert np.allclose(out.data[0, c], v)


class TestPoolUpsample:
    def test_maxpool_window(self):
        x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert dc.maxpool2d(x).data[0, 0, 0, 0] == 4.0

    def test_maxpool_odd_raises(self):
        with pytest.raises(OddSpatialDim):
            dc.maxpool2d(t64(np.zeros((1, 1, 3, 4))))

    def test_maxpool_routes_gradient_to_argmax(self):
        x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        with Tape() as tape:
            loss = dc.reduce_sum(dc.maxpool2d(x))
            backward(tape, loss)
        assert np.array_equal(x.grad, [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_upsample_blocks(self):
        x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = dc.nearest_upsample2x(x)
        assert np.array_equal(
            out.data[0, 0],
            [[1.0, 1.0, 2.0, 2.0], [1.0, 1.0, 2.0, 2.0],
             [3.0, 3.0, 4.0, 4.0], [3.0, 3.0, 4.0, 4.0]],
        )


class TestSoftmax:
    def test_uniform_logits(self):
        x = t64(np.zeros((2, 3, 4, 4)))
        out = dc.channel_softmax(x)
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_sums_to_one(self):
        x = t64(np.random.default_rng(1).normal(size=(2, 4, 3, 3)))
        out = dc.channel_softmax(x)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-12)


class TestCropResize:
    def test_full_box_identity(self):
        img = np.random.default_rng(2).normal(size=(1, 1, 4, 4))
        box = t64([[0.0, 1.0, 0.0, 1.0]])
        out = dc.crop_resize(Tensor(img), box, 4, 4)
        assert np.allclose(out.data, img)

    def test_midpoint_interpolation(self):
        # output row 0 samples X = (0.375 + 0.25*0.5)*8 - 0.5 = 3.5, midway rows 3 and 4
        img = t64(np.tile(np.arange(8.0)[:, None], (1, 8))[None, None])
        box = t64([[0.375, 0.875, 0.0, 1.0]])
        out = dc.crop_resize(img, box, 2, 2)
        assert np.allclose(out.data[0, 0], [[3.5, 3.5], [5.5, 5.5]])

    def test_zero_padding_attenuates_edges(self):
        # upsampling the full box reads one zero neighbor at the borders
        img = t64(np.ones((1, 1, 2, 2)))
        box = t64([[0.0, 1.0, 0.0, 1.0]])
        out = dc.crop_resize(img, box, 4, 4)
        assert out.data[0, 0, 0, 0] == pytest.approx(0.5625)
        assert out.data[0, 0, 1, 1] == pytest.approx(1.0)

    def test_degenerate_box_is_sanitized(self):
        img = t64(np.random.default_rng(4).normal(size=(1, 1, 8, 8)))
        out = dc.crop_resize(img, t64([[0.5, 0.5, 0.5, 0.5]]), 4, 4)
        clean = dc.sanitize_values(np.array([[0.5, 0.5, 0.5, 0.5]]), 8, 8)
        ref = dc.crop_resize(img, t64(clean), 4, 4)
        assert np.allclose(out.data, ref.data)

    def test_constant_inside(self):
        img = t64(np.full((1, 1, 8, 8), 3.0))
        box = t64([[0.25, 0.75, 0.25, 0.75]])
        out = dc.crop_resize(img, box, 4, 4)
        assert np.allclose(out.data, 3.0)

    def test_output_too_small(self):
        with pytest.raises(OutputTooSmall):
            dc.crop_resize(t64(np.ones((1, 1, 4, 4))), t64([[0.0, 1.0, 0.0, 1.0]]), 1, 4)

    def test_box_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dc.crop_resize(t64(np.ones((1, 1, 4, 4))), t64(np.zeros((2, 4))), 2, 2)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t64(np.arange(6.0).reshape(2, 3))
        with Tape() as tape:
            backward(tape, dc.reduce_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square_gradient(self):
        x = t64([1.0, 2.0, 3.0])
        with Tape() as tape:
            backward(tape, dc.reduce_sum(dc.mul(x, x)))
        assert np.array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_raises(self):
        x = t64([1.0, 2.0])
        with pytest.raises(NotScalarLoss):
            with Tape() as tape:
                backward(tape, dc.mul(x, x))

    def test_gradients_deterministic(self):
        def run():
            x = t64(np.linspace(-1.0, 1.0, 12).reshape(1, 1, 3, 4))
            w = t64(np.linspace(0.1, 0.9, 9).reshape(1, 1, 3, 3))
            with Tape() as tape:
                loss = dc.reduce_sum(dc.relu(dc.conv2d(x, w, t64([0.1]))))
                backward(tape, loss)
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)

    def test_check_gradients_linear(self):
        x = t64([0.3, -0.7, 1.1])
        y = t64([0.5, 0.2, -0.4])
        err = check_gradients(lambda a, b: dc.reduce_sum(dc.mul(a, b)), [x, y])
        assert err <= 1e-10


class TestSanitize:
    @given(vals=st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4))
    @settings(max_examples=100, deadline=None)
    def test_sanitized_box_is_usable(self, vals):
        box = np.array([vals], dtype=np.float64)
        out = dc.sanitize_values(box, 32, 32)
        x0, x1, y0, y1 = out[0]
        assert 0.0 <= x0 <= x1 <= 1.0
        assert 0.0 <= y0 <= y1 <= 1.0
        assert x1 - x0 >= 2.0 / 32 - 1e-9
        assert y1 - y0 >= 2.0 / 32 - 1e-9

    def test_in_range_box_kept(self):
        box = np.array([[0.2, 0.6, 0.3, 0.9]])
        assert np.allclose(dc.sanitize_values(box, 32, 32), box)


class TestSerial:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        params = {
            "enc.w": Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32)),
            "enc.b": Tensor(np.zeros(4, dtype=np.float32)),
        }
        path = tmp_path / "model.npz"
        dc.save_params(path, params)
        loaded = dc.load_params(path)
        assert sorted(loaded) == sorted(params)
        for k in params:
            assert np.array_equal(loaded[k].data, params[k].data)

    def test_garbage_file_raises(self, tmp_path):
        path = tmp_path / "bad.npz"
        path.write_bytes(b"not a parameter file")
        with pytest.raises(IoFailure):
            dc.load_params(path)
