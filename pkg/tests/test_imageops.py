import numpy as np
import pytest

from condfuse.errors import DimensionError, ParameterError
from condfuse.gradcheck import grad_check
from condfuse.imageops import bilinear_upsample, block_mean, conv2d, local_stats
from condfuse.tensor import Tensor


def conv2d_oracle(x, k, dilation=1, padding=0, stride=1):
    """Naive quadruple-loop cross-correlation."""
    co, ci, ks, _ = k.shape
    h, w = x.shape[1], x.shape[2]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    span = dilation * (ks - 1) + 1
    ho = (h + 2 * padding - span) // stride + 1
    wo = (w + 2 * padding - span) // stride + 1
    out = np.zeros((co, ho, wo), dtype=x.dtype)
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(ci):
                    for a in range(ks):
                        for b in range(ks):
                            acc += (
                                xp[c, i * stride + a * dilation, j * stride + b * dilation]
                                * k[o, c, a, b]
                            )
                out[o, i, j] = acc
    return out


def local_stats_oracle(img, window):
    """Brute-force window scan with replicate padding."""
    p = window // 2
    xp = np.pad(img, ((0, 0), (p, p), (p, p)), mode="edge")
    h, w = img.shape[1], img.shape[2]
    mean = np.zeros_like(img, dtype=np.float64)
    var = np.zeros_like(img, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            win = xp[0, i : i + window, j : j + window].astype(np.float64)
            mean[0, i, j] = win.mean()
            var[0, i, j] = win.var()
    return mean, var


def bilinear_oracle(x, scale):
    """Direct half-pixel-center interpolation of one [H,W] plane."""
    h, w = x.shape
    out = np.zeros((h * scale, w * scale))
    for i in range(h * scale):
        for j in range(w * scale):
            sy = (i + 0.5) / scale - 0.5
            sx = (j + 0.5) / scale - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            fy, fx = sy - y0, sx - x0
            y0c, y1c = np.clip([y0, y0 + 1], 0, h - 1)
            x0c, x1c = np.clip([x0, x0 + 1], 0, w - 1)
            out[i, j] = (
                x[y0c, x0c] * (1 - fy) * (1 - fx)
                + x[y0c, x1c] * (1 - fy) * fx
                + x[y1c, x0c] * fy * (1 - fx)
                + x[y1c, x1c] * fy * fx
            )
    return out


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((1, 6, 6))
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(out.data, x)

    def test_ones_kernel_on_constant_image(self):
        x = np.ones((1, 5, 5))
        k = np.ones((1, 1, 3, 3))
        out = conv2d(Tensor(x), Tensor(k), padding=1).data[0]
        assert out[2, 2] == pytest.approx(9.0)
        assert out[0, 0] == pytest.approx(4.0)
        assert out[0, 2] == pytest.approx(6.0)

    def test_dilation_2_taps_land_at_offset_2(self):
        x = np.zeros((1, 5, 5))
        x[0, 2, 2] = 1.0
        k = np.ones((1, 1, 3, 3))
        out = conv2d(Tensor(x), Tensor(k), dilation=2, padding=2).data[0]
        nz = np.argwhere(out != 0)
        offs = nz - np.array([2, 2])
        assert set(map(tuple, offs)) == {(dy, dx) for dy in (-2, 0, 2) for dx in (-2, 0, 2)}

    @pytest.mark.parametrize("dilation,padding,stride", [(1, 1, 1), (2, 2, 1), (1, 0, 2)])
    def test_matches_loop_oracle_exactly_in_64bit(self, rng, dilation, padding, stride):
        # integer-valued data keeps every partial sum exactly representable,
        # so any summation order produces identical bits
        x = rng.integers(-8, 9, (2, 8, 8)).astype(np.float64)
        k = rng.integers(-4, 5, (3, 2, 3, 3)).astype(np.float64)
        ours = conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64),
                      dilation=dilation, padding=padding, stride=stride).data
        assert np.array_equal(ours, conv2d_oracle(x, k, dilation, padding, stride))

    def test_matches_loop_oracle_on_floats(self, rng):
        x = rng.standard_normal((2, 8, 8))
        k = rng.standard_normal((3, 2, 3, 3))
        ours = conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), padding=1).data
        assert np.allclose(ours, conv2d_oracle(x, k, 1, 1, 1), rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv2d(Tensor(rng.standard_normal((2, 4, 4))), Tensor(rng.standard_normal((1, 3, 3, 3))))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(DimensionError):
            conv2d(Tensor(rng.standard_normal((1, 4, 4))), Tensor(rng.standard_normal((1, 1, 2, 2))))

    def test_too_small_output_rejected(self, rng):
        with pytest.raises(DimensionError):
            conv2d(Tensor(rng.standard_normal((1, 3, 3))), Tensor(rng.standard_normal((1, 1, 3, 3))), dilation=2)

    def test_gradient_matches_finite_differences(self, rng):
        k = Tensor(rng.standard_normal((2, 1, 3, 3)), dtype=np.float64)
        err = grad_check(lambda t: conv2d(t, k, padding=1).sum(), Tensor(rng.standard_normal((1, 5, 5))), step=1e-3)
        assert err < 1e-4

    def test_batched_equals_per_item(self, rng):
        x = rng.standard_normal((3, 2, 6, 6)).astype(np.float32)
        k = Tensor(rng.standard_normal((4, 2, 3, 3)).astype(np.float32))
        batched = conv2d(Tensor(x), k, padding=1).data
        for i in range(3):
            single = conv2d(Tensor(x[i]), k, padding=1).data
            assert np.array_equal(batched[i], single)


class TestLocalStats:
    def test_constant_image(self):
        m, v = local_stats(Tensor(np.full((1, 5, 5), 0.37)), 3)
        assert np.array_equal(m.data, np.full((1, 5, 5), 0.37))
        assert np.all(v.data == 0.0)

    def test_checkerboard_window3(self):
        x = np.indices((6, 6)).sum(axis=0) % 2
        m, v = local_stats(Tensor(x[None].astype(np.float64), dtype=np.float64), 3)
        interior_m = m.data[0, 1:-1, 1:-1]
        assert set(np.round(interior_m, 12).reshape(-1)) <= {round(4 / 9, 12), round(5 / 9, 12)}
        assert np.allclose(v.data[0, 1:-1, 1:-1], interior_m * (1 - interior_m), atol=1e-12)

    def test_single_bright_pixel_matches_oracle(self):
        x = np.zeros((1, 7, 7))
        x[0, 3, 3] = 1.0
        m, v = local_stats(Tensor(x, dtype=np.float64), 3)
        om, ov = local_stats_oracle(x, 3)
        assert np.allclose(m.data, om, atol=1e-12)
        assert np.allclose(v.data, ov, atol=1e-12)
        assert v.data[0, 3, 3] == pytest.approx(8 / 81)
        assert v.data[0, 2, 2] == pytest.approx(8 / 81)

    def test_matches_oracle_random(self, rng):
        x = rng.uniform(0, 1, (1, 9, 9))
        for window in (3, 5):
            m, v = local_stats(Tensor(x, dtype=np.float64), window)
            om, ov = local_stats_oracle(x, window)
            assert np.allclose(m.data, om, atol=1e-12)
            assert np.allclose(v.data, ov, atol=1e-12)

    def test_variance_nonnegative(self, rng):
        for _ in range(5):
            x = rng.uniform(0, 1, (1, 8, 8))
            _, v = local_stats(Tensor(x), 5)
            assert np.all(v.data >= 0)

    def test_even_window_rejected(self, rng):
        with pytest.raises(ParameterError):
            local_stats(Tensor(rng.uniform(0, 1, (1, 4, 4))), 4)


class TestBilinearUpsample:
    def test_scale_one_is_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 4)))
        assert bilinear_upsample(x, 1) is x

    def test_constant_preserved(self):
        out = bilinear_upsample(Tensor(np.full((1, 3, 3), 2.5)), 2)
        assert np.allclose(out.data, 2.5, atol=1e-7)

    def test_2x2_against_half_pixel_oracle(self):
        x = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = bilinear_upsample(Tensor(x[None], dtype=np.float64), 2).data[0]
        assert np.allclose(out, bilinear_oracle(x, 2), atol=1e-12)

    def test_random_against_oracle(self, rng):
        x = rng.standard_normal((5, 4))
        out = bilinear_upsample(Tensor(x[None], dtype=np.float64), 3).data[0]
        assert np.allclose(out, bilinear_oracle(x, 3), atol=1e-12)

    def test_minmax_envelope(self, rng):
        for _ in range(5):
            x = rng.standard_normal((2, 5, 5))
            out = bilinear_upsample(Tensor(x), 2).data
            assert out.min() >= x.min() - 1e-6
            assert out.max() <= x.max() + 1e-6

    def test_bad_scale_rejected(self, rng):
        with pytest.raises(ParameterError):
            bilinear_upsample(Tensor(rng.standard_normal((1, 2, 2))), 0)


class TestBlockMean:
    def test_constant(self):
        out = block_mean(Tensor(np.full((1, 4, 4), 3.0)), 2)
        assert out.shape == (1, 2, 2)
        assert np.allclose(out.data, 3.0)

    def test_values(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        out = block_mean(Tensor(x, dtype=np.float64), 2).data
        assert out[0, 0, 0] == pytest.approx(np.mean([0, 1, 4, 5]))
