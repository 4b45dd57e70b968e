"""Masked self-supervised training of a pseudo-inverse through a fixed blur.

A batch is the whole observation with a freshly sampled mask J. The network
sees ``m_J(y)``, its output is pushed through the forward convolution and
compared with ``y`` on J only. The no-mask ablation compares ``g(f(y))``
with ``y`` on every pixel.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import masking
from .errors import NumericError, ParameterError
from .neural import ModelParams, Tape, UNetConfig, reg_loss_and_grad, unet_backward, unet_forward, unet_init
from .optim import NoisyAdam
from .tensor import Kernel, as_image, convolve, convolve_adjoint, kernel_otf

log = logging.getLogger(__name__)

PRECISIONS = ("float64", "float32")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 128
    batches_per_epoch: int = 4
    strategy: str = "interpolate"
    d_start: float = 0.5
    d_end: float = 0.01
    l1: float = 1e-7
    l2: float = 1e-6
    lr: float = 1e-2
    lr_halvings: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    noise_std0: float = 1e-3
    gamma: float = 1.0
    depth: int = 2
    base_channels: int = 16
    seed: int = 0
    no_mask: bool = False
    boundary: str = "circular"
    precision: str = "float64"

    def __post_init__(self):
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ParameterError("epochs and batches_per_epoch must be >= 1")
        if not 0 < self.d_end <= self.d_start <= 1:
            raise ParameterError("densities must satisfy 0 < d_end <= d_start <= 1")
        if self.l1 < 0 or self.l2 < 0 or self.lr < 0:
            raise ParameterError("l1, l2 and lr must be non-negative")
        if self.strategy not in masking.STRATEGIES:
            raise ParameterError(f"unknown masking strategy {self.strategy!r}")
        if self.boundary not in ("circular", "reflect"):
            raise ParameterError(f"unknown boundary {self.boundary!r}")
        if self.precision not in PRECISIONS:
            raise ParameterError(f"precision must be one of {', '.join(PRECISIONS)}")

    @property
    def unet(self) -> UNetConfig:
        return UNetConfig(self.depth, self.base_channels, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ForwardModel:
    """The fixed blur ``g`` together with its adjoint, specialised to one image shape."""

    def __init__(self, kernel: Kernel, shape, boundary: str = "circular"):
        self.kernel = kernel
        self.shape = tuple(shape)
        self.boundary = boundary
        self._otf = kernel_otf(kernel, shape) if boundary == "circular" else None

    def __call__(self, x):
        if self._otf is not None:
            return np.fft.irfft2(np.fft.rfft2(x) * self._otf, s=self.shape)
        return convolve(x, self.kernel, self.boundary)

    def adjoint(self, r):
        if self._otf is not None:
            return np.fft.irfft2(np.fft.rfft2(r) * np.conj(self._otf), s=self.shape)
        return convolve_adjoint(r, self.kernel, self.boundary)


def _pad_amounts(shape, depth):
    m = 2**depth
    return [(0, (-n) % m) for n in shape]


def network_apply(params: ModelParams, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    """Run the UNet on ``x`` after reflect-padding to a multiple of ``2**depth``, then crop."""
    h, w = x.shape
    pads = _pad_amounts(x.shape, params.config.depth)
    xin = np.pad(x, pads, mode="symmetric") if any(p for _, p in pads) else x
    return unet_forward(params, xin, tape)[:h, :w]


def _network_backward(params, tape, grad, shape):
    pads = _pad_amounts(shape, params.config.depth)
    return unet_backward(params, tape, np.pad(grad, pads))


def _as_forward(k, shape, boundary) -> ForwardModel:
    if isinstance(k, ForwardModel):
        return k
    return ForwardModel(k if isinstance(k, Kernel) else Kernel(k), shape, boundary)


def composite_h(params: ModelParams, y, plan: masking.MaskPlan, k, boundary: str = "circular") -> np.ndarray:
    """``g(f(m_J(y)))`` on the whole grid; its values on J never depend on ``y`` at J."""
    y = as_image(y)
    g = _as_forward(k, y.shape, boundary)
    return g(network_apply(params, masking.apply_mask(y, plan)))


def _add_reg(loss, grads, params, l1, l2):
    if l1 == 0 and l2 == 0:
        return loss, grads
    rl, rg = reg_loss_and_grad(params, l1, l2)
    return loss + rl, {k: grads[k] + rg[k] for k in grads}


def ssi_loss(params: ModelParams, y, plan: masking.MaskPlan, k, l1=0.0, l2=0.0, boundary="circular"):
    """Masked self-supervised loss and its parameter gradients.

    The data term is the mean over J of ``(g(f(m_J(y))) - y)**2``. The
    masking step is treated as a constant input, so no gradient flows
    through the values it wrote.
    """
    y = as_image(y)
    if plan.shape != y.shape:
        raise ParameterError(f"mask shape {plan.shape} does not match image shape {y.shape}")
    n = plan.count
    if n == 0:
        raise ParameterError("mask plan is empty")
    g = _as_forward(k, y.shape, boundary)
    tape = Tape()
    f = network_apply(params, masking.apply_mask(y, plan), tape)
    resid = np.where(plan.masked, g(f) - y, 0.0)
    loss = float(np.sum(resid * resid) / n)
    grads = _network_backward(params, tape, g.adjoint(2.0 * resid / n), y.shape)
    return _add_reg(loss, grads, params, l1, l2)


def naive_loss(params: ModelParams, y, k, l1=0.0, l2=0.0, boundary="circular"):
    """Unmasked self-consistency loss ``mean((g(f(y)) - y)**2)`` and its gradients."""
    y = as_image(y)
    g = _as_forward(k, y.shape, boundary)
    tape = Tape()
    resid = g(network_apply(params, y, tape)) - y
    loss = float(np.mean(resid * resid))
    grads = _network_backward(params, tape, g.adjoint(2.0 * resid / resid.size), y.shape)
    return _add_reg(loss, grads, params, l1, l2)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: halve ``cfg.lr`` at each of ``lr_halvings`` equal fractions of training."""
    if cfg.lr_halvings <= 0:
        return cfg.lr
    stage = min(epoch * cfg.lr_halvings // cfg.epochs, cfg.lr_halvings - 1)
    return cfg.lr * 0.5**stage


def derived_seed(*words: int) -> int:
    """Deterministic 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(words)).generate_state(1)[0])


def train(y, k, cfg: TrainConfig, on_batch=None, init: ModelParams | None = None) -> ModelParams:
    """Fit a pseudo-inverse to the single observation ``y``.

    ``on_batch(epoch, batch, density, loss)`` is called after every batch;
    the density is reported as 0 for the no-mask ablation. The network runs
    in ``cfg.precision``; the returned weights are always float64.
    """
    y = as_image(y)
    g = _as_forward(k, y.shape, cfg.boundary)
    params = (unet_init(cfg.unet) if init is None else init).astype(cfg.precision)
    opt = NoisyAdam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam, cfg.noise_std0, cfg.gamma,
                    seed=derived_seed(cfg.seed, 0xADA))
    for epoch in range(cfg.epochs):
        density = 0.0 if cfg.no_mask else masking.density_schedule(epoch, cfg.epochs, cfg.d_start, cfg.d_end)
        lr = learning_rate(cfg, epoch)
        total = 0.0
        for batch in range(cfg.batches_per_epoch):
            if cfg.no_mask:
                loss, grads = naive_loss(params, y, g, cfg.l1, cfg.l2)
            else:
                plan = masking.sample_mask(y.shape, density, derived_seed(cfg.seed, epoch, batch), cfg.strategy)
                loss, grads = ssi_loss(params, y, plan, g, cfg.l1, cfg.l2)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
            opt.step(params, grads, epoch, lr)
            total += loss
            if on_batch is not None:
                on_batch(epoch, batch, density, loss)
        log.info("epoch %d/%d density %.4f lr %.2e mean loss %.6g",
                 epoch + 1, cfg.epochs, density, lr, total / cfg.batches_per_epoch)
    if not params.is_finite():
        raise NumericError("training produced non-finite parameters")
    return params.astype(np.float64)


def infer(params: ModelParams, y) -> np.ndarray:
    """Apply the trained pseudo-inverse to ``y`` (no masking) and clamp to [0, 1]."""
    return np.clip(network_apply(params, as_image(y)), 0.0, 1.0)
