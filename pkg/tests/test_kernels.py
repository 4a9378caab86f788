"""Conv kernels against a naive oracle, plus numba/numpy parity."""

import numpy as np
import pytest

from featreplay import backend, kernels


def naive_conv2d(x, w, b, stride):
    """Reference implementation: plain python loops, same padding."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    y = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - ph
                                ix = ox * stride + kx - pw
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[i, ci, iy, ix] * w[co, ci, ky, kx]
                    y[i, co, oy, ox] = acc
    return y


@pytest.fixture(params=["numpy", "numba"])
def each_backend(request):
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend("numba")


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3])
def test_forward_matches_naive(each_backend, stride, k):
    rng = np.random.default_rng(42)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(5, 3, k, k))
    b = rng.normal(size=5)
    got = kernels.conv2d_forward(x, w, b, stride)
    want = naive_conv2d(x, w, b, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_backward_input_matches_finite_difference(each_backend, stride):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = np.zeros(3)
    gy = rng.normal(size=kernels.conv2d_forward(x, w, b, stride).shape)
    gx = kernels.conv2d_backward_input(gy, w, stride, 6, 6)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (0, 1, 3, 2), (0, 0, 5, 5)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        yp = kernels.conv2d_forward(xp, w, b, stride)
        ym = kernels.conv2d_forward(xm, w, b, stride)
        num = float(((yp - ym) * gy).sum() / (2 * h))
        assert abs(num - gx[idx]) < 1e-6 * max(1.0, abs(num))


@pytest.mark.parametrize("stride", [1, 2])
def test_backward_weights_matches_finite_difference(each_backend, stride):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = np.zeros(3)
    gy = rng.normal(size=kernels.conv2d_forward(x, w, b, stride).shape)
    gw = kernels.conv2d_backward_weights(x, gy, stride, 3, 3)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (2, 1, 2, 2), (1, 0, 1, 2)]:
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        yp = kernels.conv2d_forward(x, wp, b, stride)
        ym = kernels.conv2d_forward(x, wm, b, stride)
        num = float(((yp - ym) * gy).sum() / (2 * h))
        assert abs(num - gw[idx]) < 1e-6 * max(1.0, abs(num))


def test_bias_gradient():
    rng = np.random.default_rng(3)
    gy = rng.normal(size=(2, 4, 5, 5))
    np.testing.assert_allclose(kernels.conv2d_backward_bias(gy), gy.sum(axis=(0, 2, 3)))


def test_numba_numpy_parity():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4, 12, 12))
    w = rng.normal(size=(6, 4, 3, 3))
    b = rng.normal(size=6)
    outs = {}
    for name in ("numpy", "numba"):
        backend.set_backend(name)
        y = kernels.conv2d_forward(x, w, b, 2)
        gy = np.ones_like(y)
        outs[name] = (
            y,
            kernels.conv2d_backward_input(gy, w, 2, 12, 12),
            kernels.conv2d_backward_weights(x, gy, 2, 3, 3),
        )
    backend.set_backend("numba")
    for a, b_ in zip(outs["numpy"], outs["numba"]):
        np.testing.assert_allclose(a, b_, rtol=1e-10, atol=1e-10)


def test_env_flag_rejects_unknown(monkeypatch):
    monkeypatch.setenv("FEATREPLAY_BACKEND", "cuda")
    backend._backend = None
    with pytest.raises(ValueError):
        backend.active_backend()
    backend._backend = None
    monkeypatch.delenv("FEATREPLAY_BACKEND")
    backend.set_backend("numba")
