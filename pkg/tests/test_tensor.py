import numpy as np
import pytest

from ssinv.errors import ParameterError
from ssinv.tensor import (
    Kernel,
    convolve,
    convolve_adjoint,
    fft_convolve,
    gaussian_psf,
    log_spectrum,
)


def naive_convolve(img, w, boundary):
    """Textbook quadruple loop, indexing the source pixel explicitly."""
    h, wd = img.shape
    r = w.shape[0] // 2
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(wd):
            acc = 0.0
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    si, sj = i - a, j - b
                    if boundary == "circular":
                        si %= h
                        sj %= wd
                    else:
                        if si < 0:
                            si = -si - 1
                        if si >= h:
                            si = 2 * h - 1 - si
                        if sj < 0:
                            sj = -sj - 1
                        if sj >= wd:
                            sj = 2 * wd - 1 - sj
                    acc += w[a + r, b + r] * img[si, sj]
            out[i, j] = acc
    return out


def test_gaussian_psf_near_delta_for_small_sigma():
    k = gaussian_psf(0.3, 2)
    assert k.weights[2, 2] > 0.9


@pytest.mark.parametrize("sigma,radius", [(0.3, 1), (1.0, 2), (1.0, 8), (2.5, 4), (7.0, 3)])
def test_gaussian_psf_normalized_symmetric(sigma, radius):
    w = gaussian_psf(sigma, radius).weights
    assert w.shape == (2 * radius + 1,) * 2
    assert abs(w.sum() - 1.0) < 1e-9
    assert np.all(w >= 0)
    np.testing.assert_array_equal(w, w[::-1, ::-1])
    np.testing.assert_array_equal(w, w.T)


def test_gaussian_psf_center_weight_matches_formula():
    # exp(-(i^2 + j^2) / 2) on the 5x5 grid, normalized, evaluated independently
    assert gaussian_psf(1.0, 2).weights[2, 2] == pytest.approx(0.16210282163712667, abs=1e-12)


@pytest.mark.parametrize("sigma,radius", [(0.0, 2), (-1.0, 2), (1.0, 0), (1.0, -3)])
def test_gaussian_psf_rejects_bad_parameters(sigma, radius):
    with pytest.raises(ParameterError):
        gaussian_psf(sigma, radius)


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
def test_delta_kernel_is_identity(boundary):
    img = np.random.default_rng(1).random((9, 12))
    for radius in (0, 1, 3):
        np.testing.assert_array_equal(convolve(img, Kernel.delta(radius), boundary), img)


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
def test_constant_image_preserved(boundary):
    img = np.full((20, 20), 0.37)
    for k in (gaussian_psf(1.0, 2), gaussian_psf(1.0, 8)):
        np.testing.assert_allclose(convolve(img, k, boundary), 0.37, atol=1e-9)


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
def test_convolve_matches_naive_loop(boundary):
    rng = np.random.default_rng(2)
    img = rng.random((8, 8))
    w = rng.random((3, 3))
    np.testing.assert_allclose(convolve(img, Kernel(w), boundary), naive_convolve(img, w, boundary), atol=1e-6)


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
def test_convolve_wide_kernel_matches_naive_loop(boundary):
    rng = np.random.default_rng(3)
    img = rng.random((13, 11))
    w = rng.random((9, 9))
    np.testing.assert_allclose(convolve(img, Kernel(w), boundary), naive_convolve(img, w, boundary), atol=1e-9)


def test_convolve_rejects_oversized_kernel():
    with pytest.raises(ParameterError):
        convolve(np.zeros((4, 10)), gaussian_psf(1.0, 2))
    with pytest.raises(ParameterError):
        fft_convolve(np.zeros((4, 10)), gaussian_psf(1.0, 2))


def test_convolve_rejects_unknown_boundary():
    with pytest.raises(ParameterError):
        convolve(np.zeros((8, 8)), Kernel.delta(1), "mirror")


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
def test_convolve_linearity(boundary):
    rng = np.random.default_rng(4)
    for trial in range(5):
        u, v = rng.random((2, 16, 14))
        a, b = rng.normal(size=2)
        k = Kernel(rng.random((5, 5)))
        lhs = convolve(a * u + b * v, k, boundary)
        rhs = a * convolve(u, k, boundary) + b * convolve(v, k, boundary)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)


@pytest.mark.parametrize("boundary", ["reflect", "circular"])
@pytest.mark.parametrize("side", [3, 5, 9])
def test_convolve_adjoint_dot_product(boundary, side):
    rng = np.random.default_rng(side)
    k = Kernel(rng.random((side, side)))
    u, v = rng.random((2, 17, 12))
    lhs = np.sum(convolve(u, k, boundary) * v)
    rhs = np.sum(u * convolve_adjoint(v, k, boundary))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_fft_convolve_delta_and_zeros():
    img = np.random.default_rng(5).random((10, 12))
    np.testing.assert_allclose(fft_convolve(img, Kernel.delta(2)), img, atol=1e-9)
    np.testing.assert_allclose(fft_convolve(np.zeros((10, 12)), gaussian_psf(1.0, 2)), 0.0, atol=1e-15)


def test_fft_convolve_matches_direct_circular():
    rng = np.random.default_rng(6)
    img = rng.random((16, 16))
    w = rng.random((5, 5))
    np.testing.assert_allclose(fft_convolve(img, Kernel(w)), naive_convolve(img, w, "circular"), atol=1e-6)


def test_fft_convolve_equals_circular_convolve_many_pairs():
    rng = np.random.default_rng(7)
    for _ in range(50):
        h, w = rng.integers(5, 24, size=2)
        side = 2 * rng.integers(0, (min(h, w) - 1) // 2 + 1) + 1
        img = rng.random((h, w))
        k = Kernel(rng.normal(size=(side, side)))
        np.testing.assert_allclose(fft_convolve(img, k), convolve(img, k, "circular"), atol=1e-6)


def test_log_spectrum_constant_image():
    s = log_spectrum(np.full((16, 16), 0.5))
    assert s[8, 8] == 1.0
    rest = np.delete(s.ravel(), 8 * 16 + 8)
    assert rest.max() < 1e-6


def test_log_spectrum_sinusoid_peaks_on_horizontal_axis():
    n = 64
    col = np.arange(n)
    img = np.tile(0.5 + 0.4 * np.sin(2 * np.pi * col / 8), (n, 1))
    s = log_spectrum(img)
    c = n // 2
    s_no_dc = s.copy()
    s_no_dc[c, c] = 0
    peaks = set(zip(*np.nonzero(s_no_dc > 0.5)))
    assert peaks == {(c, c - n // 8), (c, c + n // 8)}
    assert s[c, c - 8] == pytest.approx(s[c, c + 8])


def test_log_spectrum_white_noise_is_flat():
    img = np.random.default_rng(8).random((128, 128))
    s = log_spectrum(img)
    assert 0.0 <= s.min() and s.max() == 1.0
    assert s.std() < 0.2
