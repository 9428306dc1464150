import numpy as np
import pytest

from abhe import ops
from abhe.correlation import (
    EPS_NORM,
    MemoryGuardError,
    channel_attention,
    correlation_volume,
    init_channel_attention,
    init_regression_head,
    regress_offsets,
)
from abhe.tensor import Tape, Tensor


def _box3(img):
    """Reference 3x3 zero-padded unit-mean smoothing (plain loops)."""
    b, h, w, c = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = np.zeros(c)
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += img[:, yy, xx].reshape(-1, c).sum(axis=0) if b == 1 else img[0, yy, xx]
            out[0, y, x] = acc / 9.0
    return out


def quadruple_loop_oracle(fa, fb):
    """Direct cosine-similarity volume, independent of the op implementation."""
    b, h, w, c = fa.shape
    fbs = np.zeros_like(fb, dtype=np.float64)
    for bi in range(b):
        for y in range(h):
            for x in range(w):
                acc = np.zeros(c)
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w:
                            acc += fb[bi, yy, xx]
                fbs[bi, y, x] = acc / 9.0
    vol = np.zeros((b, h, w, h * w))
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                m = i * w + j
                va = fa[bi, i, j].astype(np.float64)
                na = np.sqrt((va * va).sum() + 1e-12) + EPS_NORM
                for k in range(h):
                    for l in range(w):
                        vb = fbs[bi, k, l]
                        nb = np.sqrt((vb * vb).sum() + 1e-12) + EPS_NORM
                        vol[bi, k, l, m] = (va @ vb) / (na * nb)
    return vol


class TestCorrelationVolume:
    def test_constant_maps_interior_cosine_one(self):
        f = Tensor(np.full((1, 5, 5, 3), 0.8, dtype=np.float32))
        vol = correlation_volume(f, f).data[0]
        interior = vol[1:-1, 1:-1, :]
        # every source channel m sees cosine 1 at interior target positions
        np.testing.assert_allclose(interior, 1.0, atol=1e-6)
        # borders are attenuated by the zero-padded smoothing but stay in bound
        assert vol.max() <= 1.0 + 1e-6

    def test_orthogonal_feature_channel_is_zero(self):
        fa = np.zeros((1, 2, 2, 4), dtype=np.float32)
        fb = np.zeros((1, 2, 2, 4), dtype=np.float32)
        fa[0, 0, 0, 0] = 1.0  # source position 0 uses channel 0
        fb[..., 1] = 1.0  # target uses channel 1 everywhere
        vol = correlation_volume(Tensor(fa), Tensor(fb)).data[0]
        np.testing.assert_allclose(vol[:, :, 0], 0.0, atol=1e-7)

    def test_matches_quadruple_loop_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            h, w = rng.integers(2, 5, 2)
            c = int(rng.integers(1, 4))
            fa = rng.standard_normal((2, h, w, c)).astype(np.float32)
            fb = rng.standard_normal((2, h, w, c)).astype(np.float32)
            vol = correlation_volume(Tensor(fa), Tensor(fb)).data
            oracle = quadruple_loop_oracle(fa, fb)
            assert np.abs(vol - oracle).max() < 1e-5

    def test_cosine_bound(self):
        rng = np.random.default_rng(32)
        fa = rng.standard_normal((1, 6, 6, 8)).astype(np.float32) * 5
        fb = rng.standard_normal((1, 6, 6, 8)).astype(np.float32) * 5
        vol = correlation_volume(Tensor(fa), Tensor(fb)).data
        assert np.abs(vol).max() <= 1.0 + 1e-6

    def test_smooth_identical_maps_peak_near_diagonal(self):
        # needs position-distinctive directions: independent smooth channels
        from abhe.data import _bilinear_resize

        rng = np.random.default_rng(33)
        chans = [_bilinear_resize(rng.random((3, 3)), 6, 6) for _ in range(8)]
        img = (np.stack(chans, axis=-1)[None] + 0.1).astype(np.float32)
        f = Tensor(img)
        vol = correlation_volume(f, f).data[0]
        h, w = 6, 6
        for m in range(h * w):
            k, l = np.unravel_index(vol[:, :, m].argmax(), (h, w))
            assert abs(k - m // w) <= 1 and abs(l - m % w) <= 1

    def test_memory_guard(self):
        big = Tensor(np.zeros((1, 70, 70, 2), dtype=np.float32))
        with pytest.raises(MemoryGuardError):
            correlation_volume(big, big, max_hw=4096)


class TestChannelAttention:
    def _volume(self, seed=0, b=2, h=3, w=3):
        rng = np.random.default_rng(seed)
        return Tensor(rng.uniform(-1, 1, (b, h, w, h * w)).astype(np.float32))

    def test_equal_peaks_give_uniform_weights(self):
        vol_np = np.zeros((1, 2, 2, 4), dtype=np.float32)
        vol_np[0, 0, 0, :] = 0.7  # every channel peaks at the same value
        params = init_channel_attention(4, np.random.default_rng(40))
        out, gate = channel_attention(Tensor(vol_np), params, return_weights=True)
        np.testing.assert_allclose(gate.data, gate.data[0, 0], atol=1e-6)
        for m in range(4):
            assert out.data[0, :, :, m].argmax() == vol_np[0, :, :, m].argmax()

    def test_zero_volume_stays_zero_with_bias_gate(self):
        params = init_channel_attention(9, np.random.default_rng(41))
        vol = Tensor(np.zeros((1, 3, 3, 9), dtype=np.float32))
        out, gate = channel_attention(vol, params, return_weights=True)
        np.testing.assert_array_equal(out.data, 0.0)
        # gate equals sigmoid of the MLP at zero input (its bias path)
        assert (gate.data > 0).all() and (gate.data < 1).all()

    def test_exact_per_channel_scaling(self):
        vol = self._volume(seed=42)
        params = init_channel_attention(9, np.random.default_rng(43))
        out, gate = channel_attention(vol, params, return_weights=True)
        expected = vol.data * gate.data[:, None, None, :]
        np.testing.assert_array_equal(out.data, expected)

    def test_argmax_preserved_and_weights_bounded(self):
        for seed in range(100):
            vol = self._volume(seed=seed)
            params = init_channel_attention(9, np.random.default_rng(1000 + seed))
            out, gate = channel_attention(vol, params, return_weights=True)
            assert (gate.data > 0).all() and (gate.data < 1).all()
            flat_in = vol.data.reshape(2, 9, 9)
            flat_out = out.data.reshape(2, 9, 9)
            np.testing.assert_array_equal(
                flat_in.argmax(axis=1), flat_out.argmax(axis=1)
            )


class TestRegressionHead:
    def test_zero_final_layer_gives_zero_offsets(self):
        params = init_regression_head(16, 8, np.random.default_rng(50))
        vol = Tensor(np.random.default_rng(51).random((3, 8, 8, 16)).astype(np.float32))
        out = regress_offsets(vol, params)
        assert out.shape == (3, 8)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_output_length_eight(self):
        for spatial, ch in ((8, 64), (16, 12)):
            params = init_regression_head(ch, spatial, np.random.default_rng(52))
            vol = Tensor(np.zeros((1, spatial, spatial, ch), dtype=np.float32))
            assert regress_offsets(vol, params).shape == (1, 8)

    def test_gradient_reaches_first_conv(self):
        params = init_regression_head(4, 8, np.random.default_rng(53))
        # unfreeze the final layer so a gradient can flow at all
        params["fc4.w"] = Tensor(
            np.random.default_rng(54).standard_normal(params["fc4.w"].shape).astype(np.float32) * 0.1,
            requires_grad=True,
        )
        vol = Tensor(np.random.default_rng(55).random((2, 8, 8, 4)).astype(np.float32))
        with Tape() as tape:
            out = regress_offsets(vol, params)
            tape.backward(ops.sum_(ops.mul(out, out)))
        g = params["conv1.w"].grad
        assert g is not None and np.abs(g).max() > 0

    def test_determinism(self):
        params = init_regression_head(8, 8, np.random.default_rng(56))
        vol = Tensor(np.random.default_rng(57).random((2, 8, 8, 8)).astype(np.float32))
        a = regress_offsets(vol, params).data
        b = regress_offsets(vol, params).data
        assert (a == b).all()
