"""Small numpy layers with explicit backward passes.

Every layer keeps its trainable arrays in ``params`` and fills ``grads``
with matching keys on ``backward``.  Image tensors use the ``(B, C, H, W)``
layout.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> dict[str, np.ndarray]:
        """Arrays that define the layer (trainable plus buffers)."""
        return dict(self.params)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.params["W"] = rng.uniform(-bound, bound, (n_in, n_out))
        self.params["b"] = np.zeros(n_out)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class Conv2d(Layer):
    """Stride-1 convolution with zero 'same' padding and an odd square kernel."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = rng or np.random.default_rng(0)
        self.kernel = kernel
        shape = (c_out, c_in, kernel, kernel)
        if zero_init:
            self.params["W"] = np.zeros(shape)
        else:
            self.params["W"] = rng.standard_normal(shape) * np.sqrt(2.0 / (c_in * kernel * kernel))
        self.params["b"] = np.zeros(c_out)

    def _windows(self, x):
        p = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        return np.lib.stride_tricks.sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.params["W"].shape[1]:
            raise ValueError(f"Conv2d expects (B, {self.params['W'].shape[1]}, H, W) input, got {x.shape}")
        self._shape = x.shape
        self._win = self._windows(x)
        out = np.einsum("bchwij,ocij->bohw", self._win, self.params["W"], optimize=True)
        return out + self.params["b"][None, :, None, None]

    def backward(self, dout):
        self.grads["W"] = np.einsum("bchwij,bohw->ocij", self._win, dout, optimize=True)
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        dwin = np.einsum("bohw,ocij->bchwij", dout, self.params["W"], optimize=True)
        b, c, h, w = self._shape
        k, p = self.kernel, self.kernel // 2
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dwin[..., i, j]
        return dxp[:, :, p:p + h, p:p + w]


class BatchNorm2d(Layer):
    """Per-channel normalisation; eval mode uses running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def state(self):
        return {**self.params, "running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean, var = self.running_mean, self.running_var
        self._train = train
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean[None, :, None, None]) * self._inv[None, :, None, None]
        return g * self._xhat + b

    def backward(self, dout):
        xhat, inv = self._xhat, self._inv[None, :, None, None]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        if not self._train:
            return dxhat * inv
        n = dout.shape[0] * dout.shape[2] * dout.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return inv / n * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x, train=False):
        self._y = sigmoid(x)
        return self._y

    def backward(self, dout):
        return dout * self._y * (1 - self._y)


class Tanh(Layer):
    def forward(self, x, train=False):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dout):
        return dout * (1 - self._y**2)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class SGD:
    """Plain gradient descent; ``momentum > 0`` adds a heavy-ball term."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._vel: dict[int, np.ndarray] = {}

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.momentum:
                v = self._vel.get(i)
                v = g.copy() if v is None else self.momentum * v + g
                self._vel[i] = v
                p -= self.lr * v
            else:
                p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t = 0

    def step(self, params, grads):
        self._t += 1
        c1 = 1 - self.beta1**self._t
        c2 = 1 - self.beta2**self._t
        for i, (p, g) in enumerate(zip(params, grads)):
            m = self._m.get(i, np.zeros_like(p))
            v = self._v.get(i, np.zeros_like(p))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self._m[i], self._v[i] = m, v
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "momentum":
        return SGD(lr, momentum=0.9)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
