"""Finite-difference checks for every layer and loss in the nn module."""

import numpy as np
import pytest

from featreplay import nn


def numerical_param_grad(loss_fn, param, idx, h=1e-6):
    old = param.data[idx]
    param.data[idx] = old + h
    lp = loss_fn()
    param.data[idx] = old - h
    lm = loss_fn()
    param.data[idx] = old
    return (lp - lm) / (2 * h)


def check_layer_gradients(layer, x, n_checks=5, seed=0, rtol=1e-4):
    """Scalar loss = sum(forward(x) * r); compare analytic vs numeric grads."""
    rng = np.random.default_rng(seed)
    y = layer.forward(x, train=True)
    r = rng.normal(size=y.shape)

    def loss():
        return float((layer.forward(x, train=True) * r).sum())

    for p in layer.params():
        p.grad[...] = 0.0
    gx = layer.backward(r)

    # input gradient
    flat = rng.choice(x.size, size=min(n_checks, x.size), replace=False)
    for f in flat:
        idx = np.unravel_index(f, x.shape)
        xp, xm = x.copy(), x.copy()
        h = 1e-6
        xp[idx] += h
        xm[idx] -= h
        num = float(((layer.forward(xp, train=True) - layer.forward(xm, train=True)) * r).sum() / (2 * h))
        layer.forward(x, train=True)  # restore cache
        assert abs(num - gx[idx]) <= rtol * max(1.0, abs(num)), f"input grad mismatch at {idx}"

    # parameter gradients
    layer.forward(x, train=True)
    for p in layer.params():
        p.grad[...] = 0.0
    layer.backward(r)
    for p in layer.params():
        flat = rng.choice(p.size, size=min(n_checks, p.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, p.data.shape)
            num = numerical_param_grad(loss, p, idx)
            assert abs(num - p.grad[idx]) <= rtol * max(1.0, abs(num)), f"{p.name} grad mismatch"


def test_conv2d_gradients():
    rng = np.random.default_rng(1)
    layer = nn.Conv2d(2, 3, 3, 1, rng)
    check_layer_gradients(layer, rng.normal(size=(2, 2, 6, 6)))


def test_conv2d_stride2_gradients():
    rng = np.random.default_rng(2)
    layer = nn.Conv2d(2, 4, 3, 2, rng)
    check_layer_gradients(layer, rng.normal(size=(2, 2, 8, 8)))


def test_instance_norm_gradients():
    rng = np.random.default_rng(3)
    layer = nn.InstanceNorm2d(3)
    layer.gamma.data[:] = rng.normal(1.0, 0.2, size=3)
    layer.beta.data[:] = rng.normal(size=3)
    check_layer_gradients(layer, rng.normal(size=(2, 3, 5, 5)))


def test_batch_norm_gradients():
    rng = np.random.default_rng(4)
    layer = nn.BatchNorm1d(6)
    layer.gamma.data[:] = rng.normal(1.0, 0.2, size=6)
    check_layer_gradients(layer, rng.normal(size=(8, 6)))


def test_batch_norm_eval_uses_running_stats():
    rng = np.random.default_rng(5)
    layer = nn.BatchNorm1d(4, momentum=1.0)
    x = rng.normal(2.0, 3.0, size=(64, 4))
    layer.forward(x, train=True)
    y = layer.forward(x, train=False)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.std(axis=0), 1.0, atol=1e-2)


def test_leaky_relu_gradients():
    rng = np.random.default_rng(6)
    check_layer_gradients(nn.LeakyReLU(0.01), rng.normal(size=(3, 4)) + 0.3)


def test_linear_gradients():
    rng = np.random.default_rng(7)
    check_layer_gradients(nn.Linear(5, 4, rng), rng.normal(size=(6, 5)))


def test_upsample_roundtrip_and_gradients():
    rng = np.random.default_rng(8)
    up = nn.NearestUpsample2d()
    x = rng.normal(size=(1, 2, 3, 3))
    y = up.forward(x)
    assert y.shape == (1, 2, 6, 6)
    assert np.all(y[0, 0, 0, 0] == y[0, 0, 1, 1])
    check_layer_gradients(up, x)


def test_sequential_gradients():
    rng = np.random.default_rng(9)
    seq = nn.Sequential([nn.Linear(4, 8, rng), nn.LeakyReLU(), nn.Linear(8, 3, rng)])
    check_layer_gradients(seq, rng.normal(size=(5, 4)))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(10)
    p = nn.softmax(rng.normal(size=(2, 3, 4, 4)), axis=1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(2, 3, 4, 4))
    t = nn.softmax(rng.normal(size=(2, 3, 4, 4)), axis=1)
    loss, grad = nn.cross_entropy_soft(logits, t)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 2, 3, 3), (0, 1, 2, 1)]:
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += h
        lm[idx] -= h
        num = (nn.cross_entropy_soft(lp, t)[0] - nn.cross_entropy_soft(lm, t)[0]) / (2 * h)
        assert abs(num - grad[idx]) < 1e-6


def test_segmentation_loss_gradient():
    rng = np.random.default_rng(12)
    logits = rng.normal(size=(2, 2, 4, 4))
    labels = (rng.random(size=(2, 4, 4)) > 0.6).astype(int)
    t = np.stack([1 - labels, labels], axis=1).astype(float)
    loss, grad = nn.segmentation_loss(logits, t)
    assert loss > 0
    h = 1e-6
    for idx in [(0, 0, 1, 1), (1, 1, 0, 3), (0, 1, 2, 2)]:
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += h
        lm[idx] -= h
        num = (nn.segmentation_loss(lp, t)[0] - nn.segmentation_loss(lm, t)[0]) / (2 * h)
        assert abs(num - grad[idx]) <= 1e-3 * max(1.0, abs(num))


def test_mse_loss():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    loss, grad = nn.mse_loss(a, b)
    assert loss == pytest.approx(((a - b) ** 2).mean())
    np.testing.assert_allclose(grad, 2 * (a - b) / a.size)


def test_adam_minimizes_quadratic():
    p = nn.Param(np.array([5.0, -3.0]))
    opt = nn.Adam([p], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        p.grad[...] = 2 * p.data
        opt.step()
    assert np.abs(p.data).max() < 1e-3
    assert opt.param_count == 2
