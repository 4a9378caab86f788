"""2D convolution kernels, the compute hot spot of the whole package.

Layout is (N, C, H, W), float64, "same" padding of k//2 per side. The numba
path runs plain jitted loops (single-threaded, fixed iteration order, so
results are bit-reproducible run to run); the numpy path uses sliding-window
views plus einsum. Dispatch happens per call via :mod:`featreplay.backend`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backend import active_backend

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def conv_out_size(size: int, k: int, stride: int) -> int:
    return (size + 2 * (k // 2) - k) // stride + 1


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _conv2d_fwd_nb(x, w, b, stride):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    y = np.empty((n, cout, ho, wo), dtype=np.float64)
    for i in range(n):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for ky in range(kh):
                            iy = oy * stride + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - pw
                                if ix < 0 or ix >= wd:
                                    continue
                                acc += x[i, ci, iy, ix] * w[co, ci, ky, kx]
                    y[i, co, oy, ox] = acc
    return y


@njit(cache=True)
def _conv2d_bwd_input_nb(gy, w, stride, h, wd):
    n, cout, ho, wo = gy.shape
    _, cin, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    gx = np.zeros((n, cin, h, wd), dtype=np.float64)
    for i in range(n):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    g = gy[i, co, oy, ox]
                    for ci in range(cin):
                        for ky in range(kh):
                            iy = oy * stride + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - pw
                                if ix < 0 or ix >= wd:
                                    continue
                                gx[i, ci, iy, ix] += g * w[co, ci, ky, kx]
    return gx


@njit(cache=True)
def _conv2d_bwd_weights_nb(x, gy, stride, kh, kw):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = gy.shape[0], gy.shape[1], gy.shape[2], gy.shape[3]
    ph, pw = kh // 2, kw // 2
    gw = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    for i in range(n):
        for co in range(cout):
            for oy in range(ho):
                for ox in range(wo):
                    g = gy[i, co, oy, ox]
                    for ci in range(cin):
                        for ky in range(kh):
                            iy = oy * stride + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - pw
                                if ix < 0 or ix >= wd:
                                    continue
                                gw[co, ci, ky, kx] += g * x[i, ci, iy, ix]
    return gw


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _conv2d_fwd_np(x, w, b, stride):
    cout, _, kh, kw = w.shape
    xp = _pad(x, kh // 2, kw // 2)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.einsum("nchwij,ocij->nohw", win, w, optimize=True)
    return y + b[None, :, None, None]


def _conv2d_bwd_input_np(gy, w, stride, h, wd):
    n, cout, ho, wo = gy.shape
    _, cin, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    gxp = np.zeros((n, cin, h + 2 * ph, wd + 2 * pw), dtype=np.float64)
    # scatter one kernel tap at a time; each tap is a dense (cout,cin) matmul
    for ky in range(kh):
        for kx in range(kw):
            contrib = np.einsum("nohw,oc->nchw", gy, w[:, :, ky, kx], optimize=True)
            gxp[:, :, ky : ky + ho * stride : stride, kx : kx + wo * stride : stride] += contrib
    if ph == 0 and pw == 0:
        return gxp
    return gxp[:, :, ph : ph + h, pw : pw + wd]


def _conv2d_bwd_weights_np(x, gy, stride, kh, kw):
    xp = _pad(x, kh // 2, kw // 2)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nohw,nchwij->ocij", gy, win, optimize=True)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Cross-correlate ``x`` (N,C,H,W) with ``w`` (K,C,kh,kw), same padding."""
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    if active_backend() == "numba" and _HAVE_NUMBA:
        return _conv2d_fwd_nb(x, w, b, stride)
    return _conv2d_fwd_np(x, w, b, stride)


def conv2d_backward_input(gy: np.ndarray, w: np.ndarray, stride: int, h: int, wd: int) -> np.ndarray:
    gy, w = _as_f64(gy), _as_f64(w)
    if active_backend() == "numba" and _HAVE_NUMBA:
        return _conv2d_bwd_input_nb(gy, w, stride, h, wd)
    return _conv2d_bwd_input_np(gy, w, stride, h, wd)


def conv2d_backward_weights(x: np.ndarray, gy: np.ndarray, stride: int, kh: int, kw: int) -> np.ndarray:
    x, gy = _as_f64(x), _as_f64(gy)
    if active_backend() == "numba" and _HAVE_NUMBA:
        return _conv2d_bwd_weights_nb(x, gy, stride, kh, kw)
    return _conv2d_bwd_weights_np(x, gy, stride, kh, kw)


def conv2d_backward_bias(gy: np.ndarray) -> np.ndarray:
    return gy.sum(axis=(0, 2, 3))
