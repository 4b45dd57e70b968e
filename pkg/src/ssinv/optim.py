"""ADAM with additive, epoch-decaying Gaussian gradient noise."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


class NoisyAdam:
    """ADAM whose gradients are perturbed by ``N(0, noise_std(epoch)**2)`` before the moment update.

    ``noise_std(epoch) = noise_std0 / (1 + epoch) ** gamma``. With
    ``noise_std0 = 0`` this is the textbook bias-corrected ADAM.
    """

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8, noise_std0=1e-3, gamma=1.0, seed=0):
        if lr < 0 or noise_std0 < 0 or gamma < 0:
            raise ParameterError("lr, noise_std0 and gamma must be non-negative")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.noise_std0 = noise_std0
        self.gamma = gamma
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def noise_std(self, epoch: int) -> float:
        return self.noise_std0 / (1.0 + epoch) ** self.gamma

    def step(self, params, grads: dict[str, np.ndarray], epoch: int = 0, lr: float | None = None):
        """Update ``params`` in place from ``grads``.

        ``params`` is either a :class:`~ssinv.neural.ModelParams` or a plain
        ``dict`` of arrays.
        """
        arrays = getattr(params, "arrays", params)
        if set(arrays) != set(grads):
            raise ParameterError("gradient keys do not match parameter keys")
        lr = self.lr if lr is None else lr
        std = self.noise_std(epoch)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in arrays.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ParameterError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            if std > 0:
                g = g + std * self._rng.standard_normal(g.shape)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        if hasattr(params, "touch"):
            params.touch()
