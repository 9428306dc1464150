import numpy as np
import pytest

from abhe import ops
from abhe.optim import Adam, adam_step
from abhe.tensor import ShapeError, Tape, Tensor


def tape_grads(fn, *arrays):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(*tensors)
        tape.backward(loss)
    return [t.grad for t in tensors]


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ops.matmul(Tensor(np.eye(2)), a)
        np.testing.assert_allclose(out.data, a.data)

    def test_row_times_column(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batch_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 4, 2))))


class TestConv2d:
    def test_one_by_one_identity_over_channels(self):
        x = Tensor(np.random.default_rng(0).random((1, 4, 4, 3)))
        k = Tensor(np.eye(3).reshape(1, 1, 3, 3))
        out = ops.conv2d(x, k, padding="same")
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_delta_kernel_identity(self):
        x = Tensor(np.random.default_rng(1).random((2, 5, 5, 2)))
        k = np.zeros((3, 3, 2, 2), dtype=np.float32)
        k[1, 1] = np.eye(2)
        out = ops.conv2d(x, Tensor(k), padding="same")
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.ones((1, 4, 4, 3))), Tensor(np.ones((3, 3, 2, 1))))

    def test_same_padding_stride2_shape(self):
        out = ops.conv2d(Tensor(np.ones((1, 64, 64, 1))), Tensor(np.ones((3, 3, 1, 4))), stride=2)
        assert out.shape == (1, 32, 32, 4)


class TestSoftmaxScaled:
    def test_uniform_on_equal_inputs(self):
        for k in (0.5, 1.0, 10.0):
            out = ops.softmax_scaled(Tensor([0.0, 0.0, 0.0]), k)
            np.testing.assert_allclose(out.data, np.ones(3) / 3, atol=1e-7)

    def test_saturation_at_large_temperature(self):
        out = ops.softmax_scaled(Tensor([1.0, 0.0]), 100.0)
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-8)

    def test_matches_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        out = ops.softmax_scaled(Tensor(x, dtype=np.float64), 10.0)
        direct = np.exp(10 * x) / np.exp(10 * x).sum()
        np.testing.assert_allclose(out.data, direct, rtol=1e-12)

    def test_rows_sum_to_one_and_bounded(self):
        rng = np.random.default_rng(3)
        out = ops.softmax_scaled(Tensor(rng.standard_normal((10, 7)) * 5), 10.0)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(10), atol=1e-6)
        assert (out.data >= 0).all() and (out.data <= 1).all()

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            ops.softmax_scaled(Tensor([1.0]), 0.0)


class TestLayerNorm:
    def test_constant_row_gives_zeros(self):
        out = ops.layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_standardization(self):
        out = ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-3)

    def test_moments_on_random_input(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((20, 16)) * 4 + 2
        out = ops.layer_norm(Tensor(x, dtype=np.float64), Tensor(np.ones(16), dtype=np.float64),
                             Tensor(np.zeros(16), dtype=np.float64)).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-6
        assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-3


class TestBilinearSample:
    def test_identity_grid(self):
        rng = np.random.default_rng(7)
        img = rng.random((1, 5, 6, 2)).astype(np.float32)
        ys, xs = np.meshgrid(np.arange(5), np.arange(6), indexing="ij")
        grid = np.stack([xs, ys], axis=-1)[None].astype(np.float32)
        out = ops.bilinear_sample(Tensor(img), Tensor(grid))
        np.testing.assert_array_equal(out.data, img)

    def test_half_pixel_shift_on_ramp(self):
        ramp = np.tile(np.arange(6.0), (4, 1))[None, :, :, None].astype(np.float32)
        ys, xs = np.meshgrid(np.arange(4), np.arange(6), indexing="ij")
        grid = np.stack([xs + 0.5, ys], axis=-1)[None].astype(np.float32)
        out = ops.bilinear_sample(Tensor(ramp), Tensor(grid)).data[0, :, :4, 0]
        np.testing.assert_allclose(out, ramp[0, :, :4, 0] + 0.5, atol=1e-6)

    def test_outside_coordinates_produce_zero(self):
        img = np.ones((1, 4, 4, 1), dtype=np.float32)
        grid = np.array([[[[-0.5, 1.0], [3.5, 1.0], [1.0, -0.2], [1.0, 3.2]]]], dtype=np.float32)
        out = ops.bilinear_sample(Tensor(img), Tensor(grid))
        np.testing.assert_array_equal(out.data, 0.0)


class TestElementwise:
    def test_relu(self):
        out = ops.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_l1_identical_is_zero(self):
        assert ops.l1_distance(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0

    def test_mean_of_squares_gradient(self):
        (g,) = tape_grads(lambda x: ops.mean(ops.mul(x, x)), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(g, [2 / 3, 4 / 3, 2.0], rtol=1e-6)

    def test_divide_broadcast(self):
        out = ops.div(Tensor([[2.0, 4.0], [6.0, 8.0]]), Tensor([[2.0]]))
        np.testing.assert_allclose(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_max_reduction_first_tie_wins(self):
        (g,) = tape_grads(lambda x: ops.sum_(ops.amax(x, axis=1)), np.array([[1.0, 3.0, 3.0]]))
        np.testing.assert_array_equal(g, [[0.0, 1.0, 0.0]])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0], dtype=np.float32)
        m = np.zeros(2, dtype=np.float32)
        v = np.zeros(2, dtype=np.float32)
        adam_step(p, np.zeros(2, dtype=np.float32), m, v, 1, lr=0.1)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_first_step_matches_hand_formula(self):
        p = np.array([0.5], dtype=np.float64)
        g = np.array([0.3], dtype=np.float64)
        m = np.zeros(1, dtype=np.float64)
        v = np.zeros(1, dtype=np.float64)
        adam_step(p, g, m, v, 1, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        mhat = 0.1 * 0.3 / (1 - 0.9)
        vhat = 0.001 * 0.09 / (1 - 0.999)
        expected = 0.5 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(p, [expected], rtol=1e-12)

    def test_quadratic_convergence(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"x": x})
        for _ in range(100):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.sum_(ops.mul(x, x))
                tape.backward(loss)
            opt.step(0.1)
        assert abs(x.data[0]) < 0.5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 1, 0.1)
