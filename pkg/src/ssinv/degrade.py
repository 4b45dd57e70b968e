"""Poisson-Gaussian plus salt-and-pepper degradation and quantization.

Random streams come from numpy's PCG64 bit generator. A single seed is
expanded with :class:`numpy.random.SeedSequence` into three independent
children: Gaussian draws, salt-and-pepper positions and replacement values,
in that order. Changing ``p`` therefore never perturbs the Gaussian field.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .tensor import as_image, convolve


@dataclass(frozen=True)
class NoiseSpec:
    alpha: float = 0.001
    sigma: float = 0.1
    p: float = 0.01
    bits: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha >= 0 and self.sigma >= 0):
            raise ParameterError("alpha and sigma must be non-negative")
        if not 0 <= self.p <= 1:
            raise ParameterError(f"p must lie in [0, 1], got {self.p}")
        if int(self.bits) != self.bits or not 1 <= self.bits <= 16:
            raise ParameterError(f"bits must be an integer in 1..16, got {self.bits}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ParameterError(f"seed must be a non-negative integer, got {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)


def eta(z, alpha: float, sigma: float):
    """Signal-dependent noise standard deviation ``sqrt(alpha * z + sigma**2)``."""
    z = np.maximum(np.asarray(z, dtype=np.float64), 0.0)
    out = np.sqrt(alpha * z + sigma * sigma)
    return float(out) if out.ndim == 0 else out


def noise_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    gauss, where, value = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.Generator(np.random.PCG64(gauss)),
        np.random.Generator(np.random.PCG64(where)),
        np.random.Generator(np.random.PCG64(value)),
    )


def quantize(x, bits: int) -> np.ndarray:
    """Snap values in [0, 1] to the nearest of the ``2**bits`` levels ``i / (2**bits - 1)``."""
    if int(bits) != bits or not 1 <= bits <= 16:
        raise ParameterError(f"bits must be an integer in 1..16, got {bits}")
    levels = float(2**bits - 1)
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.rint(x * levels) / levels


def apply_noise(x, spec: NoiseSpec, return_replaced: bool = False):
    """Degrade ``x`` as ``s_p(z + eta(z) N)`` then clamp to [0, 1] and quantize.

    When ``return_replaced`` is true the boolean salt-and-pepper selection is
    returned alongside the image.
    """
    z = as_image(x)
    g_rng, where_rng, value_rng = noise_streams(spec.seed)
    y = z + eta(z, spec.alpha, spec.sigma) * g_rng.standard_normal(z.shape)
    replaced = where_rng.random(z.shape) < spec.p
    values = value_rng.random(z.shape)
    y = np.where(replaced, values, y)
    y = quantize(np.clip(y, 0.0, 1.0), spec.bits)
    if return_replaced:
        return y, replaced
    return y


def degrade(x, kernel, spec: NoiseSpec, boundary: str = "reflect") -> np.ndarray:
    """Full observation model: blur with ``kernel`` then apply :func:`apply_noise`."""
    blurred = np.clip(convolve(x, kernel, boundary), 0.0, 1.0)
    return apply_noise(blurred, spec)
