"""Fidelity metrics: PSNR, SSIM, normalized mutual information and spectral MI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft, ndimage

from .errors import ParameterError

PSNR_CAP = 100.0


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    mi: float
    smi: float
    image: str = ""
    method: str = ""

    def row(self) -> list:
        return [self.psnr, self.ssim, self.mi, self.smi]


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use population (biased) moments; the mean is taken
    over pixels at least 5 away from the border and clipped to [0, 1].
    """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < 11:
        raise ParameterError(f"SSIM needs a 2-D image with sides >= 11, got {a.shape}")
    win = _gaussian_window()

    def blur(z):
        z = ndimage.correlate1d(z, win, axis=0, mode="reflect")
        return ndimage.correlate1d(z, win, axis=1, mode="reflect")

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    s = (num / den)[5:-5, 5:-5]
    return float(np.clip(s.mean(), 0.0, 1.0))


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def mutual_information(a, b, bins: int = 256) -> float:
    """Histogram mutual information normalized by ``max(H(A), H(B))``.

    Values are clipped to [0, 1] before binning. Two constant images score 1
    when equal and 0 otherwise.
    """
    a, b = _pair(a, b)
    a = np.clip(a.ravel(), 0.0, 1.0)
    b = np.clip(b.ravel(), 0.0, 1.0)
    joint, _, _ = np.histogram2d(a, b, bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    joint /= joint.sum()
    ha = _entropy(joint.sum(axis=1))
    hb = _entropy(joint.sum(axis=0))
    h = max(ha, hb)
    if h == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    mi = ha + hb - _entropy(joint.ravel())
    return float(np.clip(mi / h, 0.0, 1.0))


def _compress(c, q):
    z = np.sign(c) * np.log1p(np.abs(c) / q)
    lo, hi = z.min(), z.max()
    if hi - lo <= 0:
        return np.zeros_like(z)
    return (z - lo) / (hi - lo)


def dct_scale(a) -> float:
    """Median absolute orthonormal DCT-II coefficient of ``a``, the log-map scale of :func:`smi`."""
    q = float(np.median(np.abs(fft.dctn(np.asarray(a, dtype=np.float64), type=2, norm="ortho"))))
    return q if q > 0 else 1.0


def smi(a, b, bins: int = 256, q: float | None = None) -> float:
    """Mutual information between log-compressed DCT-II spectra of ``a`` and ``b``.

    Coefficients are mapped through ``sign(c) * log1p(|c| / q)`` with ``q``
    taken from the first (reference) image unless given, then min-max
    normalized to [0, 1] before :func:`mutual_information`.
    """
    a, b = _pair(a, b)
    if q is None:
        q = dct_scale(a)
    ca = fft.dctn(a, type=2, norm="ortho")
    cb = fft.dctn(b, type=2, norm="ortho")
    return mutual_information(_compress(ca, q), _compress(cb, q), bins)


def report(reference, candidate, image: str = "", method: str = "") -> MetricReport:
    return MetricReport(
        psnr(reference, candidate),
        ssim(reference, candidate),
        mutual_information(reference, candidate),
        smi(reference, candidate),
        image,
        method,
    )
