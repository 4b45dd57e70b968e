import struct

import numpy as np
import pytest
from scipy.signal import correlate2d

from ssinv.errors import ParameterError, StateError
from ssinv.neural import (
    MAGIC,
    ModelParams,
    Tape,
    UNetConfig,
    load_params,
    param_count,
    reg_loss_and_grad,
    save_params,
    unet_backward,
    unet_forward,
    unet_init,
    zero_params,
)


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.mark.parametrize("kwargs", [dict(depth=0), dict(depth=4), dict(base_channels=3), dict(seed=-1)])
def test_config_validation(kwargs):
    with pytest.raises(ParameterError):
        UNetConfig(**kwargs)


def test_init_deterministic():
    a = unet_init(UNetConfig(2, 8, 7))
    b = unet_init(UNetConfig(2, 8, 7))
    assert a.names() == b.names()
    for n in a.names():
        np.testing.assert_array_equal(a[n], b[n])
    assert not np.array_equal(a.flat(), unet_init(UNetConfig(2, 8, 8)).flat())


def test_param_count_closed_form():
    # enc0: 8*1*9+8 + 8*8*9+8; enc1: 16*8*9+16 + 16*16*9+16; mid: 2*(16*16*9+16)
    # dec1: 16*32*9+16 + 16*16*9+16; dec0: 8*24*9+8 + 8*8*9+8; out: 8+1
    walk = 80 + 584 + 1168 + 2320 + 2 * 2320 + 4624 + 2320 + 1736 + 584 + 9
    cfg = UNetConfig(2, 8, 0)
    assert param_count(cfg) == walk == 18065
    assert unet_init(cfg).size == walk


def test_init_bounded_over_seeds():
    for seed in range(100):
        p = unet_init(UNetConfig(2, 8, seed))
        assert np.abs(p.flat()).max() < 1.0
        for n in p.names():
            if n.endswith(".b"):
                np.testing.assert_array_equal(p[n], 0.0)


def test_zero_network_is_zero_map():
    p = zero_params(UNetConfig(2, 8, 0))
    x = np.random.default_rng(0).random((16, 16))
    np.testing.assert_array_equal(unet_forward(p, x), 0.0)


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_forward_shape_and_determinism(depth):
    p = unet_init(UNetConfig(depth, 4, 1))
    x = np.random.default_rng(1).random((16, 24))
    a = unet_forward(p, x)
    assert a.shape == x.shape
    assert a.tobytes() == unet_forward(p, x).tobytes()


def test_forward_rejects_indivisible_shape():
    p = unet_init(UNetConfig(2, 4, 1))
    with pytest.raises(ParameterError):
        unet_forward(p, np.zeros((10, 12)))


def reference_depth1(p, x):
    """Straight-line depth-1 UNet built from scipy correlations, one channel pair at a time."""

    def conv(chans, name):
        w, b = p[f"{name}.w"], p[f"{name}.b"]
        out = []
        for o in range(w.shape[0]):
            acc = np.full(chans[0].shape, b[o])
            for c, ch in enumerate(chans):
                acc = acc + correlate2d(ch, w[o, c], mode="same", boundary="fill")
            out.append(acc)
        return out

    def act(chans):
        return [np.maximum(c, 0) + 0.01 * np.minimum(c, 0) for c in chans]

    e = act(conv(act(conv([x], "enc0.conv0")), "enc0.conv1"))
    d = [0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2]) for c in e]
    m = act(conv(act(conv(d, "mid.conv0")), "mid.conv1"))
    u = [np.kron(c, np.ones((2, 2))) for c in m]
    dec = act(conv(act(conv(u + e, "dec0.conv0")), "dec0.conv1"))
    w, b = p["out.w"], p["out.b"]
    return sum(w[0, c, 0, 0] * dec[c] for c in range(len(dec))) + b[0]


def test_forward_matches_independent_reimplementation():
    p = unet_init(UNetConfig(1, 4, 3))
    rng = np.random.default_rng(3)
    for n in p.names():
        if n.endswith(".b"):
            p[n][...] = rng.normal(scale=0.1, size=p[n].shape)
    x = rng.random((8, 8))
    np.testing.assert_allclose(unet_forward(p, x), reference_depth1(p, x), atol=1e-10)


def test_float32_weights_run_in_float32():
    p = unet_init(UNetConfig(2, 4, 1))
    q = p.astype(np.float32)
    assert q.dtype == np.float32 and p.dtype == np.float64
    x = np.random.default_rng(4).random((16, 16))
    g = np.random.default_rng(5).normal(size=(16, 16))
    tp, tq = Tape(), Tape()
    out64, out32 = unet_forward(p, x, tp), unet_forward(q, x, tq)
    assert out32.dtype == np.float32
    np.testing.assert_allclose(out32, out64, rtol=1e-4, atol=1e-5)
    g64, g32 = unet_backward(p, tp, g), unet_backward(q, tq, g)
    for n in p.names():
        assert g32[n].dtype == np.float32
        assert rel_err(g32[n], g64[n], floor=1e-3).max() < 1e-3


def test_zero_output_grad_gives_zero_gradients():
    p = unet_init(UNetConfig(1, 4, 0))
    x = np.random.default_rng(0).random((8, 8))
    tape = Tape()
    unet_forward(p, x, tape)
    grads = unet_backward(p, tape, np.zeros((8, 8)))
    assert set(grads) == set(p.names())
    for n in p.names():
        assert grads[n].shape == p[n].shape
        np.testing.assert_array_equal(grads[n], 0.0)


def test_single_pixel_gradient_is_local():
    # the depth-1 receptive field radius is well below the 16-pixel gap used here
    p = unet_init(UNetConfig(1, 4, 5))
    x = np.zeros((32, 32))
    x[:, 24:] = np.random.default_rng(5).random((32, 8))
    tape = Tape()
    unet_forward(p, x, tape)
    g = np.zeros((32, 32))
    g[8, 6] = 1.0
    grads = unet_backward(p, tape, g)
    np.testing.assert_array_equal(grads["enc0.conv0.w"], 0.0)
    # the same pixel next to the textured region does see the input
    tape = Tape()
    unet_forward(p, x, tape)
    g = np.zeros((32, 32))
    g[8, 22] = 1.0
    assert np.abs(unet_backward(p, tape, g)["enc0.conv0.w"]).max() > 0


def test_stale_and_reused_tape_rejected():
    p = unet_init(UNetConfig(1, 4, 0))
    x = np.random.default_rng(0).random((8, 8))
    tape = Tape()
    unet_forward(p, x, tape)
    p.touch()
    with pytest.raises(StateError):
        unet_backward(p, tape, np.ones((8, 8)))
    tape = Tape()
    unet_forward(p, x, tape)
    unet_backward(p, tape, np.ones((8, 8)))
    with pytest.raises(StateError):
        unet_backward(p, tape, np.ones((8, 8)))
    tape = Tape()
    unet_forward(p, x, tape)
    with pytest.raises(StateError):
        unet_backward(unet_init(UNetConfig(1, 4, 0)), tape, np.ones((8, 8)))


def finite_difference_check(p, x, proj, eps=1e-5):
    tape = Tape()
    unet_forward(p, x, tape)
    grads = unet_backward(p, tape, proj)
    analytic = np.concatenate([grads[n].ravel() for n in p.names()])
    theta = p.flat()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += eps
        p.set_flat(t)
        fp = np.sum(unet_forward(p, x) * proj)
        t[i] -= 2 * eps
        p.set_flat(t)
        fm = np.sum(unet_forward(p, x) * proj)
        numeric[i] = (fp - fm) / (2 * eps)
    p.set_flat(theta)
    return rel_err(analytic, numeric).max()


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = unet_init(UNetConfig(1, 4, seed))
    for n in p.names():
        if n.endswith(".b"):
            p[n][...] = rng.normal(scale=0.1, size=p[n].shape)
    x = rng.random((8, 8))
    proj = rng.normal(size=(8, 8))
    assert finite_difference_check(p, x, proj) < 1e-4


def test_reg_zero_params():
    p = zero_params(UNetConfig(1, 4, 0))
    loss, grads = reg_loss_and_grad(p, 0.1, 0.01)
    assert loss == 0.0
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_reg_single_weight():
    p = ModelParams(UNetConfig(), {"only.w": np.array([2.0]), "only.b": np.array([5.0])})
    loss, grads = reg_loss_and_grad(p, 0.1, 0.01)
    assert loss == pytest.approx(0.24)
    assert grads["only.w"][0] == pytest.approx(0.14)
    assert grads["only.b"][0] == 0.0


def test_reg_gradient_finite_differences():
    p = unet_init(UNetConfig(1, 4, 9))
    _, grads = reg_loss_and_grad(p, 0.03, 0.2)
    theta = p.flat()
    analytic = np.concatenate([grads[n].ravel() for n in p.names()])
    eps = 1e-7
    for i in np.random.default_rng(0).choice(theta.size, 200, replace=False):
        if abs(theta[i]) < 10 * eps and theta[i] != 0:
            continue
        t = theta.copy()
        t[i] += eps
        p.set_flat(t)
        fp, _ = reg_loss_and_grad(p, 0.03, 0.2)
        t[i] -= 2 * eps
        p.set_flat(t)
        fm, _ = reg_loss_and_grad(p, 0.03, 0.2)
        assert abs((fp - fm) / (2 * eps) - analytic[i]) < 1e-6
    p.set_flat(theta)


def test_reg_rejects_negative_weights():
    with pytest.raises(ParameterError):
        reg_loss_and_grad(unet_init(UNetConfig(1, 4, 0)), -1, 0)


def test_checkpoint_round_trip(tmp_path):
    p = unet_init(UNetConfig(2, 4, 11))
    path = tmp_path / "m.ckpt"
    save_params(path, p)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"SSIM0DEL"
    (n,) = struct.unpack("<I", raw[8:12])
    assert raw[12:12 + n].decode() == "depth=2\nbase_channels=4\nseed=11\n"
    first = p[p.names()[0]].ravel()[0]
    assert struct.unpack("<d", raw[12 + n:20 + n])[0] == first
    assert len(raw) == 12 + n + 8 * p.size
    q = load_params(path)
    assert q.config == p.config
    np.testing.assert_array_equal(q.flat(), p.flat())


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTAMODELFILE")
    with pytest.raises(ParameterError):
        load_params(path)
