import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import blur2d, dot_loop, gaussian_taps, quantile_sorted, sobel_naive, std_two_pass
from zeresfdg.errors import ShapeMismatchError
from zeresfdg.tensor import (
    GaussianKernel,
    Tensor4,
    add_scaled,
    dot_per_sample,
    gaussian_blur,
    load_tensor,
    quantile_per_sample,
    save_tensor,
    sobel_magnitude,
    std_per_sample,
)


def rand(shape, seed=0, scale=1.0):
    return Tensor4(np.random.default_rng(seed).standard_normal(shape) * scale)


def test_storage_order_and_validation():
    t = Tensor4.from_flat(np.arange(24), (1, 2, 3, 4))
    # index = ((b*c + ch)*h + y)*w + x
    assert t.data[0, 1, 2, 3] == t.flat()[((0 * 2 + 1) * 3 + 2) * 4 + 3]
    assert t.dtype == np.float32
    with pytest.raises(ValueError):
        Tensor4(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        Tensor4(np.zeros((1, 0, 2, 2)))
    with pytest.raises(ValueError):
        t.data[0, 0, 0, 0] = 5.0


class TestAddScaled:
    def test_zero_base(self):
        out = add_scaled(Tensor4.zeros((1, 1, 2, 2)), Tensor4.ones((1, 1, 2, 2)), 2)
        assert np.all(out.data == 2.0)

    def test_k_zero_is_identity(self):
        a = rand((2, 3, 4, 4))
        assert np.array_equal(add_scaled(a, rand((2, 3, 4, 4), 1), 0).data, a.data)

    def test_arithmetic(self):
        a = Tensor4.from_flat([1, 2], (1, 1, 1, 2))
        b = Tensor4.from_flat([3, 4], (1, 1, 1, 2))
        assert add_scaled(a, b, 0.5).flat().tolist() == [2.5, 4.0]

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeMismatchError, match=r"\(1, 1, 2, 2\).*\(1, 1, 2, 3\)"):
            add_scaled(Tensor4.zeros((1, 1, 2, 2)), Tensor4.zeros((1, 1, 2, 3)), 1.0)


class TestReductions:
    def test_dot_ones(self):
        one = Tensor4.ones((1, 1, 2, 2))
        assert dot_per_sample(one, one).tolist() == [4.0]

    def test_dot_orthogonal(self):
        a = Tensor4.from_flat([1, -1], (1, 1, 1, 2))
        b = Tensor4.from_flat([1, 1], (1, 1, 1, 2))
        assert dot_per_sample(a, b).tolist() == [0.0]

    @pytest.mark.parametrize("shape", [(2, 3, 4, 4), (2, 4, 16, 16), (1, 1, 1, 7)])
    def test_dot_matches_loop(self, shape):
        a, b = rand(shape, 1), rand(shape, 2)
        np.testing.assert_allclose(dot_per_sample(a, b), dot_loop(a.data, b.data), rtol=1e-6)

    def test_dot_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dot_per_sample(Tensor4.zeros((1, 1, 2, 2)), Tensor4.zeros((2, 1, 2, 2)))

    def test_std_constant(self):
        assert std_per_sample(Tensor4.full((1, 2, 3, 3), 4.2)).tolist() == [0.0]

    def test_std_two_point(self):
        t = Tensor4.from_flat([1, -1, 1, -1], (1, 1, 2, 2))
        assert std_per_sample(t).tolist() == [1.0]

    @pytest.mark.parametrize("shape", [(2, 4, 8, 8), (2, 4, 16, 16)])
    def test_std_matches_two_pass(self, shape):
        a = rand(shape, 3, scale=2.5)
        np.testing.assert_allclose(std_per_sample(a), std_two_pass(a.data), rtol=1e-6)

    def test_std_needs_two_elements(self):
        with pytest.raises(ValueError):
            std_per_sample(Tensor4.ones((3, 1, 1, 1)))


class TestGaussian:
    @pytest.mark.parametrize("sigma", [0.1, 0.5, 1.0, 2.0, 3.3])
    def test_kernel_invariants(self, sigma):
        k = GaussianKernel.from_sigma(sigma)
        assert k.radius == int(np.ceil(3 * sigma))
        assert len(k) == 2 * k.radius + 1
        assert abs(k.taps.sum() - 1.0) <= 1e-6
        np.testing.assert_array_equal(k.taps, k.taps[::-1])

    def test_kernel_matches_oracle_weights(self):
        taps, radius = gaussian_taps(1.0)
        k = GaussianKernel.from_sigma(1.0)
        assert k.radius == radius
        np.testing.assert_allclose(k.taps, taps, rtol=1e-15)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_constant_preserved(self, sigma):
        t = Tensor4.full((2, 3, 7, 5), -1.75)
        assert np.max(np.abs(gaussian_blur(t, sigma).data - t.data)) <= 1e-6

    def test_impulse_center_and_neighbors(self):
        a = np.zeros((1, 1, 9, 9))
        a[0, 0, 4, 4] = 1.0
        out = gaussian_blur(Tensor4(a, np.float64), 1.0).data[0, 0]
        # values from the direct 2D convolution oracle: taps[r]^2, taps[r]*taps[r+1], taps[r+1]^2
        assert out[4, 4] == pytest.approx(0.15924112569070245, rel=1e-12)
        assert out[4, 5] == pytest.approx(0.09658462501856413, rel=1e-12)
        assert out[3, 5] == pytest.approx(0.05858153633060701, rel=1e-12)
        taps = GaussianKernel.from_sigma(1.0).taps
        np.testing.assert_allclose(out[1:8, 1:8], np.outer(taps, taps), rtol=1e-12)

    def test_small_sigma_is_near_identity(self):
        a = rand((1, 2, 6, 6), 4)
        assert GaussianKernel.from_sigma(0.1).radius == 1
        assert np.max(np.abs(gaussian_blur(a, 0.1).data - a.data)) <= 1e-3
        np.testing.assert_allclose(gaussian_blur(a, 0.1).data, blur2d(a.data, 0.1), atol=1e-6)

    @pytest.mark.parametrize("shape,sigma", [((2, 3, 11, 13), 1.0), ((1, 2, 4, 5), 2.0), ((1, 1, 1, 6), 1.0)])
    def test_matches_direct_2d_oracle(self, shape, sigma):
        a = rand(shape, 5)
        np.testing.assert_allclose(gaussian_blur(a, sigma).data, blur2d(a.data, sigma),
                                   rtol=1e-6, atol=1e-7)

    @given(k=st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_commutes_with_scaling(self, k, seed):
        a = rand((1, 2, 6, 7), seed).astype(np.float64)
        np.testing.assert_allclose(gaussian_blur(a * k, 1.0).data, k * gaussian_blur(a, 1.0).data,
                                   rtol=1e-6, atol=1e-12)

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            GaussianKernel.from_sigma(0.0)


class TestSobel:
    def test_constant_gives_zero(self):
        assert np.all(sobel_magnitude(Tensor4.full((1, 2, 5, 5), 3.0)).data == 0.0)

    def test_vertical_step(self):
        a = np.zeros((1, 1, 8, 8))
        a[..., 4:] = 1.0
        mag = sobel_magnitude(Tensor4(a)).data[0, 0]
        assert mag.shape == (8, 8)
        # x-stencil column weights 1 + 2 + 1
        assert np.all(mag[1:7, 3] == 4.0) and np.all(mag[1:7, 4] == 4.0)
        assert np.all(mag[:, :3] == 0.0) and np.all(mag[:, 5:] == 0.0)

    @pytest.mark.parametrize("shape", [(1, 3, 8, 8), (2, 2, 5, 9)])
    def test_matches_naive(self, shape):
        a = rand(shape, 6)
        np.testing.assert_allclose(sobel_magnitude(a).data, sobel_naive(a.data), rtol=1e-6, atol=1e-6)

    def test_too_small(self):
        with pytest.raises(ValueError):
            sobel_magnitude(Tensor4.zeros((1, 1, 2, 5)))


class TestQuantile:
    def test_extremes(self):
        a = rand((2, 1, 5, 5), 7)
        flat = a.data.reshape(2, -1)
        assert quantile_per_sample(a, 0).tolist() == flat.min(axis=1).tolist()
        assert quantile_per_sample(a, 1).tolist() == flat.max(axis=1).tolist()

    def test_interpolated_levels(self):
        a = Tensor4.from_flat(np.arange(1000), (1, 1, 1, 1000))
        assert quantile_per_sample(a, 0.999)[0] == pytest.approx(998.001, abs=1e-9)
        assert quantile_per_sample(a, 0.001)[0] == pytest.approx(0.999, abs=1e-9)

    def test_matches_sort_oracle(self):
        a = rand((3, 2, 9, 9), 8)
        for q in (0.0, 0.001, 0.37, 0.5, 0.999, 1.0):
            expect = [quantile_sorted(row, q) for row in a.data.reshape(3, -1)]
            np.testing.assert_allclose(quantile_per_sample(a, q), expect, rtol=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            quantile_per_sample(Tensor4.zeros((1, 1, 2, 2)), 1.5)

    @given(q1=st.floats(0, 1), q2=st.floats(0, 1), seed=st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_q(self, q1, q2, seed):
        a = rand((2, 1, 6, 6), seed)
        lo, hi = sorted((q1, q2))
        assert np.all(quantile_per_sample(a, lo) <= quantile_per_sample(a, hi))


def test_tensor_file_round_trip(tmp_path):
    a = rand((2, 3, 5, 4), 9)
    save_tensor(a, tmp_path / "t.bin")
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw == a.data.astype("<f4").tobytes()
    assert json.loads((tmp_path / "t.json").read_text()) == {"shape": [2, 3, 5, 4]}
    b = load_tensor(tmp_path / "t.bin")
    assert b.shape == a.shape and b.data.tobytes() == a.data.tobytes()


def test_tensor_file_size_mismatch(tmp_path):
    save_tensor(Tensor4.zeros((1, 1, 2, 2)), tmp_path / "t.bin")
    (tmp_path / "t.json").write_text('{"shape": [1, 1, 2, 3]}')
    with pytest.raises(ValueError):
        load_tensor(tmp_path / "t.bin")
