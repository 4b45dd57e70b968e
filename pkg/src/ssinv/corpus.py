"""Standard grayscale test images, reduced to 256x256 in [0, 1].

The images ship with scikit-image, so no download is needed. Sources larger
than 512 pixels on a side are cropped to 512 and 2x2 averaged; smaller ones
are centre-cropped.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

STANDARD_IMAGES = ("camera", "moon", "coins", "brick", "grass", "shepp_logan_phantom")
BENCHMARK_IMAGES = ("camera", "moon", "coins")


def standard_image(name: str, size: int = 256) -> np.ndarray:
    if name not in STANDARD_IMAGES:
        raise ParameterError(f"unknown test image {name!r}; choose from {', '.join(STANDARD_IMAGES)}")
    from skimage import data

    x = np.asarray(getattr(data, name)(), dtype=np.float64)
    if x.ndim == 3:
        x = x[..., :3].mean(axis=-1)
    h, w = x.shape
    if min(h, w) >= 2 * size:
        x = x[: 2 * size, : 2 * size].reshape(size, 2, size, 2).mean(axis=(1, 3))
    elif min(h, w) >= size:
        i, j = (h - size) // 2, (w - size) // 2
        x = x[i:i + size, j:j + size]
    else:
        raise ParameterError(f"{name} is smaller than {size}x{size}")
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo)
