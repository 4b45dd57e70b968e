"""Random coordinate sets J, the masking functions m_J and the density schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import as_image

STRATEGIES = ("zero", "uniform_random", "interpolate")

_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass(frozen=True, eq=False)
class MaskPlan:
    """A masked coordinate set together with the rule used to overwrite it.

    ``masked`` is a boolean ``(height, width)`` grid, true on J.
    """

    masked: np.ndarray
    strategy: str = "interpolate"
    seed: int = 0

    def __post_init__(self):
        m = np.array(self.masked, dtype=bool)
        if m.ndim != 2:
            raise ParameterError("mask must be 2-D")
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        m.setflags(write=False)
        object.__setattr__(self, "masked", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.masked.shape

    @property
    def count(self) -> int:
        return int(self.masked.sum())


def sample_mask(shape, density: float, seed: int, strategy: str = "interpolate") -> MaskPlan:
    """Mask each pixel independently with probability ``density``.

    An empty draw is replaced by a single masked pixel at flat index
    ``seed % n`` so that the plan is never empty.
    """
    if not 0 < density <= 1:
        raise ParameterError(f"density must lie in (0, 1], got {density}")
    h, w = shape
    rng = np.random.Generator(np.random.PCG64(seed))
    masked = rng.random((h, w)) < density
    if not masked.any():
        masked.flat[seed % masked.size] = True
    return MaskPlan(masked, strategy, seed)


def _interpolate(y: np.ndarray, masked: np.ndarray) -> np.ndarray:
    h, w = y.shape
    vals = np.pad(np.where(masked, np.nan, y), 1, constant_values=np.nan)
    stack = np.stack([vals[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in _NEIGHBOURS])
    sub = stack[:, masked]
    have = ~np.all(np.isnan(sub), axis=0)
    fill = np.empty(sub.shape[1])
    if have.any():
        fill[have] = np.nanmedian(sub[:, have], axis=0)
    if not have.all():
        # with every pixel masked no statistic independent of J exists; use 0
        fill[~have] = y[~masked].mean() if (~masked).any() else 0.0
    out = y.copy()
    out[masked] = fill
    return out


def apply_mask(y, plan: MaskPlan) -> np.ndarray:
    """Overwrite the pixels of J according to ``plan.strategy``.

    The result never depends on the input values inside J.
    """
    y = as_image(y)
    if y.shape != plan.shape:
        raise ParameterError(f"mask shape {plan.shape} does not match image shape {y.shape}")
    masked = plan.masked
    if plan.strategy == "zero":
        return np.where(masked, 0.0, y)
    if plan.strategy == "uniform_random":
        # fixed stream offset keeps the replacement values distinct from the mask draw
        rng = np.random.Generator(np.random.PCG64([plan.seed, 1]))
        return np.where(masked, rng.random(y.shape), y)
    return _interpolate(y, masked)


def density_schedule(epoch: int, total_epochs: int, d_start: float = 0.5, d_end: float = 0.01) -> float:
    """Geometric decay of the masking density from ``d_start`` to ``d_end``."""
    if total_epochs <= 1:
        return float(d_start)
    t = epoch / (total_epochs - 1)
    return float(d_start * (d_end / d_start) ** t)
