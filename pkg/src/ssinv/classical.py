"""Baseline deconvolution: Lucy-Richardson, Chambolle-Pock TV and nonlinear CG on smoothed TV.

All solvers are deterministic. The blur is applied with :func:`ssinv.tensor.convolve`
using the requested boundary, reflect by default to match how benchmark
observations are produced.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import Kernel, as_image, convolve, convolve_adjoint

LR_ITERATIONS = (5, 10, 20)


class LineSearchWarning(RuntimeWarning):
    """Backtracking failed to find a decrease; the best iterate so far was returned."""


@dataclass(frozen=True)
class TvConfig:
    lam: float = 0.01
    iters: int = 300
    tau: float | None = None
    sigma_pd: float | None = None
    eps_tv: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError(f"lam must be non-negative, got {self.lam}")
        if self.iters < 1:
            raise ParameterError(f"iters must be >= 1, got {self.iters}")
        for name in ("tau", "sigma_pd"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"{name} must be positive, got {v}")
        if not self.eps_tv > 0:
            raise ParameterError(f"eps_tv must be positive, got {self.eps_tv}")


def _kernel(k) -> Kernel:
    return k if isinstance(k, Kernel) else Kernel(k)


def lucy_richardson(y, k, iters: int, boundary: str = "reflect") -> np.ndarray:
    """Multiplicative Lucy-Richardson iterations starting from ``y``."""
    y = as_image(y)
    if np.any(y < 0):
        raise ParameterError("Lucy-Richardson requires a non-negative observation")
    k = _kernel(k)
    kf = k.flipped()
    x = y.copy()
    for _ in range(iters):
        est = np.maximum(convolve(x, k, boundary), 1e-12)
        x = x * convolve(y / est, kf, boundary)
    return np.maximum(x, 0.0)


# -- total variation helpers ----------------------------------------------------

def grad2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with a zero last difference (Neumann boundary)."""
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:-1] = x[1:] - x[:-1]
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    return gy, gx


def div2d(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad2d`."""
    d = np.zeros_like(py)
    d[0] += py[0]
    d[1:-1] += py[1:-1] - py[:-2]
    d[-1] -= py[-2]
    d[:, 0] += px[:, 0]
    d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    d[:, -1] -= px[:, -2]
    return d


def tv(x: np.ndarray) -> float:
    gy, gx = grad2d(x)
    return float(np.sqrt(gy * gy + gx * gx).sum())


def tv_energy(x, y, k, lam: float, boundary: str = "reflect") -> float:
    """``0.5 * ||k * x - y||^2 + lam * TV(x)`` with isotropic TV."""
    r = convolve(x, k, boundary) - y
    return 0.5 * float(np.sum(r * r)) + lam * tv(x)


def smoothed_tv_energy(x, y, k, lam: float, eps: float, boundary: str = "reflect") -> float:
    r = convolve(x, k, boundary) - y
    gy, gx = grad2d(x)
    return 0.5 * float(np.sum(r * r)) + lam * float(np.sqrt(gy * gy + gx * gx + eps * eps).sum())


def operator_norm(k, shape, boundary: str = "reflect", iters: int = 50) -> float:
    """Power-iteration estimate of the norm of ``x -> (k * x, grad x)``."""
    k = _kernel(k)
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    s = 0.0
    for _ in range(iters):
        z = convolve_adjoint(convolve(x, k, boundary), k, boundary) - div2d(*grad2d(x))
        s = np.linalg.norm(z)
        if s == 0:
            return 0.0
        x = z / s
    return float(np.sqrt(s))


# -- solvers --------------------------------------------------------------------

def chambolle_pock_tv(y, k, cfg: TvConfig = TvConfig(), boundary: str = "reflect", callback=None) -> np.ndarray:
    """Primal-dual solver for ``min_x 0.5 ||k * x - y||^2 + lam TV(x)``.

    Both the data term and TV are dualised, so each iteration only needs
    the blur, its adjoint and the gradient. ``callback(it, x)`` is called
    after every iteration.
    """
    y = as_image(y)
    k = _kernel(k)
    L = operator_norm(k, y.shape, boundary)
    tau = cfg.tau if cfg.tau is not None else 0.9 / L
    sigma = cfg.sigma_pd if cfg.sigma_pd is not None else 0.9 / L
    if tau * sigma * L * L > 1.0:
        raise ParameterError(f"step sizes violate tau*sigma*L^2 <= 1 (L={L:.4f}, tau={tau}, sigma={sigma})")
    lam = cfg.lam
    x = y.copy()
    xbar = x.copy()
    py = np.zeros_like(y)
    px = np.zeros_like(y)
    q = np.zeros_like(y)
    for it in range(cfg.iters):
        gy, gx = grad2d(xbar)
        py += sigma * gy
        px += sigma * gx
        norm = np.maximum(1.0, np.sqrt(py * py + px * px) / lam) if lam > 0 else np.inf
        py /= norm
        px /= norm
        q = (q + sigma * (convolve(xbar, k, boundary) - y)) / (1.0 + sigma)
        x_new = x - tau * (convolve_adjoint(q, k, boundary) - div2d(py, px))
        xbar = 2.0 * x_new - x
        x = x_new
        if callback is not None:
            callback(it, x)
    return x


def cg_tv(y, k, cfg: TvConfig = TvConfig(iters=200), boundary: str = "reflect", callback=None) -> np.ndarray:
    """Polak-Ribiere nonlinear CG on ``0.5 ||k * x - y||^2 + lam sum sqrt(|grad x|^2 + eps^2)``.

    The search direction is reset to steepest descent every 32 iterations
    and whenever it stops being a descent direction. Step lengths come from
    Armijo backtracking. If backtracking fails a :class:`LineSearchWarning`
    is emitted and the best iterate is returned.
    """
    y = as_image(y)
    k = _kernel(k)
    lam, eps = cfg.lam, cfg.eps_tv

    def fg(x):
        r = convolve(x, k, boundary) - y
        gy, gx = grad2d(x)
        mag = np.sqrt(gy * gy + gx * gx + eps * eps)
        f = 0.5 * float(np.sum(r * r)) + lam * float(mag.sum())
        g = convolve_adjoint(r, k, boundary) - lam * div2d(gy / mag, gx / mag)
        return f, g

    x = y.copy()
    f, g = fg(x)
    d = -g
    step = 1.0
    for it in range(cfg.iters):
        gnorm = float(np.sqrt(np.sum(g * g)))
        if gnorm < 1e-8:
            break
        slope = float(np.sum(g * d))
        if slope >= 0:
            d = -g
            slope = -gnorm * gnorm
        alpha = min(1.0, 2.0 * step)
        for _ in range(60):
            x_try = x + alpha * d
            f_try, g_try = fg(x_try)
            if f_try <= f + 1e-4 * alpha * slope and f_try < f:
                break
            alpha *= 0.5
        else:
            warnings.warn(f"line search failed at iteration {it}", LineSearchWarning, stacklevel=2)
            break
        step = alpha
        if (it + 1) % 32 == 0:
            beta = 0.0
        else:
            beta = max(0.0, float(np.sum(g_try * (g_try - g))) / float(np.sum(g * g)))
        x, f, g = x_try, f_try, g_try
        d = -g + beta * d
        if callback is not None:
            callback(it, x)
    return x
