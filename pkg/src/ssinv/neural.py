"""A small single-channel UNet with hand-written forward and backward passes.

Layout per level: two 3x3 convolutions with leaky-ReLU, 2x2 average pooling
on the way down, nearest-neighbour 2x upsampling plus skip concatenation on
the way up, and a final linear 1x1 convolution. Activations are held as
``(channels, height, width)`` arrays in the dtype of the weights (float64
unless converted with ``ModelParams.astype``) and convolutions run as
im2col matrix products.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, StateError

LEAK = 0.01
MAGIC = b"SSIM0DEL"


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2
    base_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.depth not in (1, 2, 3):
            raise ParameterError(f"depth must be 1, 2 or 3, got {self.depth}")
        if int(self.base_channels) != self.base_channels or self.base_channels < 4:
            raise ParameterError(f"base_channels must be an integer >= 4, got {self.base_channels}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ParameterError(f"seed must be a non-negative integer, got {self.seed}")

    def to_text(self) -> str:
        return f"depth={self.depth}\nbase_channels={self.base_channels}\nseed={self.seed}\n"

    @classmethod
    def from_text(cls, text: str) -> "UNetConfig":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                fields[key.strip()] = int(value)
        return cls(**fields)


def layer_specs(config: UNetConfig) -> list[tuple[str, int, int, int]]:
    """Declared layers as ``(name, out_channels, in_channels, kernel_size)``."""
    chans = [config.base_channels * 2**i for i in range(config.depth)]
    specs = []
    cin = 1
    for i, c in enumerate(chans):
        specs += [(f"enc{i}.conv0", c, cin, 3), (f"enc{i}.conv1", c, c, 3)]
        cin = c
    specs += [("mid.conv0", cin, cin, 3), ("mid.conv1", cin, cin, 3)]
    below = cin
    for i in reversed(range(config.depth)):
        c = chans[i]
        specs += [(f"dec{i}.conv0", c, below + c, 3), (f"dec{i}.conv1", c, c, 3)]
        below = c
    specs.append(("out", 1, chans[0], 1))
    return specs


def param_count(config: UNetConfig) -> int:
    return sum(co * ci * k * k + co for _, co, ci, k in layer_specs(config))


class ModelParams:
    """Trainable weights of the network, keyed ``"<layer>.w"`` / ``"<layer>.b"``.

    ``generation`` is bumped by every in-place update so that stale tapes
    can be detected.
    """

    def __init__(self, config: UNetConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays
        self.generation = 0

    def names(self) -> list[str]:
        return list(self.arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.arrays.values())).dtype

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        """Copy with every array converted to ``dtype``; activations follow the weights."""
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def set_flat(self, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ParameterError(f"expected {self.size} values, got {vec.size}")
        i = 0
        for a in self.arrays.values():
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size
        self.touch()

    def touch(self):
        self.generation += 1

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def unet_init(config: UNetConfig) -> ModelParams:
    """He-uniform weights ``U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`` and zero biases."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    arrays = {}
    for name, co, ci, k in layer_specs(config):
        bound = np.sqrt(6.0 / (ci * k * k))
        arrays[f"{name}.w"] = rng.uniform(-bound, bound, size=(co, ci, k, k))
        arrays[f"{name}.b"] = np.zeros(co)
    return ModelParams(config, arrays)


def zero_params(config: UNetConfig) -> ModelParams:
    params = unet_init(config)
    for a in params.arrays.values():
        a[...] = 0.0
    return params


# -- layer primitives --------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 9, h, w), dtype=x.dtype)
    for t in range(9):
        dy, dx = divmod(t, 3)
        cols[:, t] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * 9, h * w)


def _col2im(dcols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    dcols = dcols.reshape(c, 9, h, w)
    dxp = np.zeros((c, h + 2, w + 2), dtype=dcols.dtype)
    for t in range(9):
        dy, dx = divmod(t, 3)
        dxp[:, dy:dy + h, dx:dx + w] += dcols[:, t]
    return dxp[:, 1:-1, 1:-1]


def _cols(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    return _im2col(x) if k == 3 else x.reshape(c, h * w)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, cols=None) -> np.ndarray:
    """Zero-padded 'same' cross-correlation of ``x`` (C, H, W) with ``w`` (O, C, k, k)."""
    c, h, wd = x.shape
    co, k = w.shape[0], w.shape[2]
    if cols is None:
        cols = _cols(x, k)
    out = w.reshape(co, -1) @ cols
    out += b[:, None]
    return out.reshape(co, h, wd)


def conv_backward(x_shape, w, dout, cols, need_dx=True):
    """Gradients of a convolution given the im2col matrix ``cols`` of its input."""
    c, h, wd = x_shape
    co, k = w.shape[0], w.shape[2]
    d2 = dout.reshape(co, h * wd)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dx = None
    if need_dx:
        dcols = w.reshape(co, -1).T @ d2
        dx = _col2im(dcols, c, h, wd) if k == 3 else dcols.reshape(c, h, wd)
    return dx, dw, db


def leaky(z):
    return np.where(z > 0, z, LEAK * z)


def leaky_grad(z, da):
    return np.where(z > 0, da, LEAK * da)


def avg_pool(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def avg_pool_backward(d):
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) * 0.25


def upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample_backward(d):
    c, h, w = d.shape
    return d.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


# -- network ------------------------------------------------------------------

class Tape:
    """Activations recorded by a forward pass, consumed by one backward pass."""

    def __init__(self):
        self.records: dict[str, tuple] = {}
        self.splits: dict[int, int] = {}
        self.params_id = None
        self.generation = None
        self.shape = None
        self.consumed = False
        self.grads: dict[str, np.ndarray] | None = None


def _block(params, name, x, tape):
    w = params[f"{name}.w"]
    cols = _cols(x, w.shape[2])
    z = conv_forward(x, w, params[f"{name}.b"], cols)
    if tape is not None:
        tape.records[name] = (x.shape, cols, z)
    return leaky(z)


def unet_forward(params: ModelParams, image, tape: Tape | None = None) -> np.ndarray:
    """Apply the network to a 2-D image whose sides are divisible by ``2**depth``."""
    depth = params.config.depth
    img = np.asarray(image, dtype=params.dtype)
    if img.ndim != 2:
        raise ParameterError("input must be a 2-D image")
    h, w = img.shape
    m = 2**depth
    if h % m or w % m or h == 0 or w == 0:
        raise ParameterError(f"image shape {img.shape} is not divisible by {m}")
    if tape is not None:
        tape.params_id = id(params)
        tape.generation = params.generation
        tape.shape = img.shape
        tape.consumed = False
        tape.records.clear()
    a = img[None]
    skips = []
    for i in range(depth):
        a = _block(params, f"enc{i}.conv0", a, tape)
        a = _block(params, f"enc{i}.conv1", a, tape)
        skips.append(a)
        a = avg_pool(a)
    a = _block(params, "mid.conv0", a, tape)
    a = _block(params, "mid.conv1", a, tape)
    for i in reversed(range(depth)):
        up = upsample(a)
        if tape is not None:
            tape.splits[i] = up.shape[0]
        a = np.concatenate([up, skips[i]], axis=0)
        a = _block(params, f"dec{i}.conv0", a, tape)
        a = _block(params, f"dec{i}.conv1", a, tape)
    cols = _cols(a, 1)
    if tape is not None:
        tape.records["out"] = (a.shape, cols, None)
    out = conv_forward(a, params["out.w"], params["out.b"], cols)
    return out[0]


def unet_backward(params: ModelParams, tape: Tape, output_grad) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of ``sum(output * output_grad)`` w.r.t. every parameter."""
    if tape.params_id != id(params) or tape.generation != params.generation:
        raise StateError("tape was recorded with different or since-modified parameters")
    if tape.consumed:
        raise StateError("tape has already been consumed by a backward pass")
    g = np.asarray(output_grad, dtype=params.dtype)
    if g.shape != tape.shape:
        raise ParameterError(f"output_grad shape {g.shape} does not match forward shape {tape.shape}")
    depth = params.config.depth
    grads = {}

    def block_back(name, da, need_dx=True):
        shape, cols, z = tape.records[name]
        dz = leaky_grad(z, da)
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = conv_backward(shape, params[f"{name}.w"], dz, cols, need_dx)
        return dx

    shape, cols, _ = tape.records["out"]
    da, grads["out.w"], grads["out.b"] = conv_backward(shape, params["out.w"], g[None], cols)
    dskips = {}
    for i in range(depth):
        da = block_back(f"dec{i}.conv1", da)
        da = block_back(f"dec{i}.conv0", da)
        n_up = tape.splits[i]
        dskips[i] = da[n_up:]
        da = upsample_backward(da[:n_up])
    da = block_back("mid.conv1", da)
    da = block_back("mid.conv0", da)
    for i in reversed(range(depth)):
        da = avg_pool_backward(da) + dskips[i]
        da = block_back(f"enc{i}.conv1", da)
        da = block_back(f"enc{i}.conv0", da, need_dx=i > 0)
    tape.consumed = True
    tape.records.clear()
    tape.grads = {k: grads[k] for k in params.names()}
    return tape.grads


def reg_loss_and_grad(params: ModelParams, l1_weight: float, l2_weight: float):
    """``l1 * sum|w| + l2 * sum w**2`` over kernel weights (biases excluded) and its gradient."""
    if l1_weight < 0 or l2_weight < 0:
        raise ParameterError("regularization weights must be non-negative")
    loss = 0.0
    grads = {}
    for name, a in params.arrays.items():
        if name.endswith(".w"):
            loss += l1_weight * np.abs(a).sum() + l2_weight * np.square(a).sum()
            grads[name] = l1_weight * np.sign(a) + 2.0 * l2_weight * a
        else:
            grads[name] = np.zeros_like(a)
    return float(loss), grads


# -- checkpoints --------------------------------------------------------------

def save_params(path, params: ModelParams):
    """Write ``MAGIC``, a u32-length-prefixed UTF-8 config and little-endian float64 weights."""
    text = params.config.to_text().encode("utf-8")
    payload = MAGIC + struct.pack("<I", len(text)) + text + params.flat().astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParameterError(f"{path}: not a model checkpoint")
    (n,) = struct.unpack("<I", raw[8:12])
    config = UNetConfig.from_text(raw[12:12 + n].decode("utf-8"))
    values = np.frombuffer(raw[12 + n:], dtype="<f8")
    params = zero_params(config)
    if values.size != params.size:
        raise ParameterError(f"{path}: expected {params.size} weights, found {values.size}")
    params.set_flat(values)
    params.generation = 0
    return params
