"""Minimal neural-net layers with explicit forward/backward passes.

Everything is float64 numpy. Each layer caches what its backward pass needs
on the instance, so a layer object serves one optimization loop at a time
(training is single-writer; make copies for concurrent inference).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError


class Param:
    """A learnable array plus its gradient accumulator."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data: np.ndarray, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def size(self) -> int:
        return self.data.size


class Layer:
    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    """Same-padding 2D convolution; stride 2 doubles as downsampling."""

    def __init__(self, cin: int, cout: int, k: int, stride: int, rng: np.random.Generator, name: str = "conv"):
        scale = np.sqrt(2.0 / (cin * k * k))
        self.w = Param(rng.normal(0.0, scale, size=(cout, cin, k, k)), f"{name}.w")
        self.b = Param(np.zeros(cout), f"{name}.b")
        self.stride = stride
        self.k = k
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        if train:
            self._x = x
        return kernels.conv2d_forward(x, self.w.data, self.b.data, self.stride)

    def backward(self, gy):
        x = self._x
        self.w.grad += kernels.conv2d_backward_weights(x, gy, self.stride, self.k, self.k)
        self.b.grad += kernels.conv2d_backward_bias(gy)
        return kernels.conv2d_backward_input(gy, self.w.data, self.stride, x.shape[2], x.shape[3])


class InstanceNorm2d(Layer):
    """Per-sample, per-channel normalization over H and W with affine params.

    No running statistics, so eval behaves exactly like train and encoder
    outputs are a pure function of the input.
    """

    def __init__(self, c: int, eps: float = 1e-5, name: str = "inorm"):
        self.gamma = Param(np.ones(c), f"{name}.gamma")
        self.beta = Param(np.zeros(c), f"{name}.beta")
        self.eps = eps
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=False):
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = x.var(axis=(2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if train:
            self._cache = (xhat, inv)
        return self.gamma.data[None, :, None, None] * xhat + self.beta.data[None, :, None, None]

    def backward(self, gy):
        xhat, inv = self._cache
        m = xhat.shape[2] * xhat.shape[3]
        self.gamma.grad += (gy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += gy.sum(axis=(0, 2, 3))
        gxhat = gy * self.gamma.data[None, :, None, None]
        s1 = gxhat.sum(axis=(2, 3), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(2, 3), keepdims=True)
        return inv * (gxhat - s1 / m - xhat * s2 / m)


class BatchNorm1d(Layer):
    """Batch normalization over feature vectors, with running stats for eval."""

    def __init__(self, n: int, eps: float = 1e-5, momentum: float = 0.1, name: str = "bnorm"):
        self.gamma = Param(np.ones(n), f"{name}.gamma")
        self.beta = Param(np.zeros(n), f"{name}.beta")
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train=False):
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        if train:
            self._cache = (xhat, inv)
        return self.gamma.data * xhat + self.beta.data

    def backward(self, gy):
        xhat, inv = self._cache
        n = xhat.shape[0]
        self.gamma.grad += (gy * xhat).sum(axis=0)
        self.beta.grad += gy.sum(axis=0)
        gxhat = gy * self.gamma.data
        s1 = gxhat.sum(axis=0)
        s2 = (gxhat * xhat).sum(axis=0)
        return inv * (gxhat - s1 / n - xhat * s2 / n)


class LeakyReLU(Layer):
    def __init__(self, alpha: float = 0.01):
        self.alpha = alpha
        self._mask = None

    def forward(self, x, train=False):
        y = np.where(x >= 0, x, self.alpha * x)
        if train:
            self._mask = x >= 0
        return y

    def backward(self, gy):
        return np.where(self._mask, gy, self.alpha * gy)


class Linear(Layer):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator, name: str = "linear"):
        scale = np.sqrt(2.0 / nin)
        self.w = Param(rng.normal(0.0, scale, size=(nin, nout)), f"{name}.w")
        self.b = Param(np.zeros(nout), f"{name}.b")
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.w.data + self.b.data

    def backward(self, gy):
        self.w.grad += self._x.T @ gy
        self.b.grad += gy.sum(axis=0)
        return gy @ self.w.data.T


class NearestUpsample2d(Layer):
    """2x nearest-neighbor upsampling; backward sums each 2x2 block."""

    def forward(self, x, train=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, gy):
        n, c, h, w = gy.shape
        return gy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, gprobs: np.ndarray, axis: int = 1) -> np.ndarray:
    """Pull a gradient on softmax outputs back to the logits."""
    dot = (gprobs * probs).sum(axis=axis, keepdims=True)
    return probs * (gprobs - dot)


def cross_entropy_soft(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy against soft targets (class axis 1).

    Returns the loss and its exact gradient with respect to the logits.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    npx = logits.size // logits.shape[1]
    loss = -(targets * logp).sum() / npx
    probs = np.exp(logp)
    # soft targets need not sum to exactly 1; keep the general form
    tsum = targets.sum(axis=1, keepdims=True)
    grad = (probs * tsum - targets) / npx
    return float(loss), grad


def soft_dice_loss(probs: np.ndarray, targets: np.ndarray, eps: float = 1e-5) -> tuple[float, np.ndarray]:
    """Batch-global soft Dice loss over foreground classes (class 0 = background).

    Returns the loss and its gradient with respect to ``probs``.
    """
    if probs.shape[1] < 2:
        raise ConfigError("soft dice needs at least one foreground class")
    fg = slice(1, probs.shape[1])
    axes = (0, 2, 3)
    p = probs[:, fg]
    g = targets[:, fg]
    num = 2.0 * (p * g).sum(axis=axes) + eps
    den = p.sum(axes) + g.sum(axes) + eps
    n_fg = probs.shape[1] - 1
    loss = 1.0 - (num / den).mean()
    gp = np.zeros_like(probs)
    gp[:, fg] = -(2.0 * g * den[None, :, None, None] - num[None, :, None, None]) / (
        den[None, :, None, None] ** 2 * n_fg
    )
    return float(loss), gp


def segmentation_loss(
    logits: np.ndarray, targets: np.ndarray, dice_weight: float = 1.0
) -> tuple[float, np.ndarray]:
    """Cross-entropy plus soft Dice; returns loss and gradient wrt logits."""
    ce, dlogits = cross_entropy_soft(logits, targets)
    probs = softmax(logits, axis=1)
    dl, dprobs = soft_dice_loss(probs, targets)
    dlogits = dlogits + dice_weight * softmax_backward(probs, dprobs, axis=1)
    return ce + dice_weight * dl, dlogits


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries, with gradient wrt ``pred``."""
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[Param], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
