"""Dense 2-D image arithmetic, PSF synthesis and the convolutional forward model.

Images are plain ``numpy`` arrays of shape ``(height, width)`` holding
float64 intensities, nominally in ``[0, 1]``. Kernels are wrapped in
:class:`Kernel` so that their radius travels with the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

BOUNDARIES = ("reflect", "circular")

# kernels with at least this many nonzero taps are applied through the FFT
FFT_MIN_TAPS = 49


@dataclass(frozen=True, eq=False)
class Kernel:
    """Square convolution kernel of odd side ``2 * radius + 1``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 != 1:
            raise ParameterError(f"kernel must be square with odd side, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ParameterError("kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def radius(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def flipped(self) -> "Kernel":
        return Kernel(self.weights[::-1, ::-1])

    @classmethod
    def delta(cls, radius: int = 0) -> "Kernel":
        w = np.zeros((2 * radius + 1, 2 * radius + 1))
        w[radius, radius] = 1.0
        return cls(w)


def as_image(img) -> np.ndarray:
    """Return ``img`` as a C-contiguous float64 2-D array, checking finiteness."""
    a = np.ascontiguousarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got {a.ndim} dimensions")
    if a.size == 0:
        raise ParameterError("image is empty")
    if not np.all(np.isfinite(a)):
        raise ParameterError("image contains non-finite values")
    return a


def _as_kernel(k) -> Kernel:
    return k if isinstance(k, Kernel) else Kernel(k)


def gaussian_psf(sigma: float, radius: int) -> Kernel:
    """Sampled isotropic Gaussian, truncated at ``radius`` and normalized to unit sum."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if int(radius) != radius or radius < 1:
        raise ParameterError(f"radius must be an integer >= 1, got {radius}")
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return Kernel(w / w.sum())


def _check_fits(img: np.ndarray, k: Kernel):
    if k.size > min(img.shape):
        raise ParameterError(
            f"kernel of side {k.size} does not fit in image of shape {img.shape}"
        )


def _pad(img: np.ndarray, r: int, boundary: str) -> np.ndarray:
    if boundary == "reflect":
        # half-sample symmetric: d c b a | a b c d
        return np.pad(img, r, mode="symmetric")
    if boundary == "circular":
        return np.pad(img, r, mode="wrap")
    raise ParameterError(f"unknown boundary {boundary!r}, expected one of {BOUNDARIES}")


def _convolve_direct(xp: np.ndarray, k: Kernel, shape) -> np.ndarray:
    r = k.radius
    h, w = shape
    out = np.zeros(shape)
    kw = k.weights
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            c = kw[a + r, b + r]
            if c != 0.0:
                out += c * xp[r - a:r - a + h, r - b:r - b + w]
    return out


def _circ(x: np.ndarray, k: Kernel, adjoint: bool = False) -> np.ndarray:
    otf = kernel_otf(k, x.shape)
    if adjoint:
        otf = np.conj(otf)
    return np.fft.irfft2(np.fft.rfft2(x) * otf, s=x.shape)


def convolve(img, k, boundary: str = "reflect") -> np.ndarray:
    """Convolution ``(k * img)`` with the given boundary extension.

    ``out[i, j] = sum_{a, b} k[a, b] * img[i - a, j - b]`` for offsets
    ``a, b`` in ``[-radius, radius]``. Dense wide kernels run through the FFT on
    the padded image, which is exact because the padding covers the
    kernel's reach.
    """
    img = as_image(img)
    k = _as_kernel(k)
    _check_fits(img, k)
    r = k.radius
    xp = _pad(img, r, boundary)
    if np.count_nonzero(k.weights) < FFT_MIN_TAPS:
        return _convolve_direct(xp, k, img.shape)
    h, w = img.shape
    return _circ(xp, k)[r:r + h, r:r + w]


def _fold(gp: np.ndarray, r: int, n: int, axis: int, boundary: str) -> np.ndarray:
    """Adjoint of padding along one axis: accumulate padded entries onto their sources."""
    idx = np.arange(-r, n + r)
    if boundary == "reflect":
        src = np.where(idx < 0, -idx - 1, idx)
        src = np.where(src >= n, 2 * n - 1 - src, src)
    else:
        src = np.mod(idx, n)
    shape = list(gp.shape)
    shape[axis] = n
    out = np.zeros(shape)
    if axis == 0:
        np.add.at(out, src, gp)
    else:
        np.add.at(out.T, src, gp.T)
    return out


def convolve_adjoint(img, k, boundary: str = "reflect") -> np.ndarray:
    """Adjoint of :func:`convolve` for the same kernel and boundary.

    For the circular boundary this is convolution with the flipped kernel.
    For the reflect boundary the contributions landing in the padding are
    folded back onto the pixels they were mirrored from.
    """
    img = as_image(img)
    k = _as_kernel(k)
    _check_fits(img, k)
    if boundary == "circular":
        return convolve(img, k.flipped(), "circular")
    if boundary != "reflect":
        raise ParameterError(f"unknown boundary {boundary!r}, expected one of {BOUNDARIES}")
    r = k.radius
    h, w = img.shape
    if np.count_nonzero(k.weights) < FFT_MIN_TAPS:
        gp = np.zeros((h + 2 * r, w + 2 * r))
        kw = k.weights
        for a in range(-r, r + 1):
            for b in range(-r, r + 1):
                c = kw[a + r, b + r]
                if c != 0.0:
                    gp[r - a:r - a + h, r - b:r - b + w] += c * img
    else:
        gp = _circ(np.pad(img, r), k, adjoint=True)
    g = _fold(gp, r, h, 0, boundary)
    return _fold(g, r, w, 1, boundary)


def kernel_otf(k, shape) -> np.ndarray:
    """Real-FFT transfer function of ``k`` embedded in a periodic grid of ``shape``."""
    k = _as_kernel(k)
    h, w = shape
    if k.size > min(h, w):
        raise ParameterError(f"kernel of side {k.size} does not fit in shape {shape}")
    r = k.radius
    buf = np.zeros((h, w))
    buf[: k.size, : k.size] = k.weights
    buf = np.roll(buf, (-r, -r), axis=(0, 1))
    return np.fft.rfft2(buf)


def fft_convolve(img, k) -> np.ndarray:
    """Circular convolution computed in the Fourier domain."""
    img = as_image(img)
    k = _as_kernel(k)
    _check_fits(img, k)
    otf = kernel_otf(k, img.shape)
    return np.fft.irfft2(np.fft.rfft2(img) * otf, s=img.shape)


def log_spectrum(img) -> np.ndarray:
    """Centered ``log(1 + |FFT|)`` magnitude spectrum rescaled to ``[0, 1]``."""
    img = as_image(img)
    mag = np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(img))))
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0:
        return np.zeros_like(mag)
    return (mag - lo) / (hi - lo)
