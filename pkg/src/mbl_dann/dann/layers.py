"""Minimal numpy layers with explicit forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` (same keys as
``self.params``). Tensors are laid out as ``(batch, features)`` or
``(batch, channels, length)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateBatchError, InvalidArgumentError

PROB_FLOOR = 1e-12


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __repr__(self):
        return type(self).__name__


def _uniform_init(rng, shape, fan_in, dtype):
    # He-style bound suited to ReLU stacks
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    """Width-3 convolution with one zero of padding on each side."""

    width = 3

    def __init__(self, in_channels, out_channels, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels, self.out_channels = in_channels, out_channels
        fan_in = in_channels * self.width
        self.params["W"] = _uniform_init(rng, (out_channels, in_channels, self.width), fan_in, dtype)
        self.params["b"] = np.zeros(out_channels, dtype)

    def _columns(self, x):
        b, c, n = x.shape
        xp = np.zeros((b, c, n + 2), dtype=x.dtype)
        xp[:, :, 1:-1] = x
        cols = np.stack([xp[:, :, k:k + n] for k in range(self.width)], axis=2)
        return cols.reshape(b, c * self.width, n)

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise InvalidArgumentError(
                f"Conv1d expects (batch, {self.in_channels}, length), got {x.shape}"
            )
        w, b = self.params["W"], self.params["b"]
        if w.shape[2] != self.width:
            raise InvalidArgumentError("Conv1d kernel width must be 3")
        self._shape = x.shape
        self._cols = self._columns(x)
        out = np.matmul(w.reshape(self.out_channels, -1), self._cols)
        return out + b[None, :, None]

    def backward(self, grad):
        w = self.params["W"]
        self.grads["W"] = np.tensordot(grad, self._cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        self.grads["b"] = grad.sum(axis=(0, 2))
        dcols = np.matmul(w.reshape(self.out_channels, -1).T, grad)
        b, c, n = self._shape
        dcols = dcols.reshape(b, c, self.width, n)
        dxp = np.zeros((b, c, n + 2), dtype=grad.dtype)
        for k in range(self.width):
            dxp[:, :, k:k + n] += dcols[:, :, k, :]
        return dxp[:, :, 1:-1]


class MaxPool1d(Layer):
    """Non-overlapping max pooling; gradient goes to the first maximal entry."""

    def __init__(self, width=3):
        super().__init__()
        self.width = width

    def forward(self, x, training=False):
        b, c, n = x.shape
        if n % self.width:
            raise InvalidArgumentError(f"length {n} is not divisible by pool width {self.width}")
        windows = x.reshape(b, c, n // self.width, self.width)
        self._idx = windows.argmax(axis=-1)[..., None]
        self._shape = x.shape
        return np.take_along_axis(windows, self._idx, axis=-1)[..., 0]

    def backward(self, grad):
        b, c, n = self._shape
        dx = np.zeros((b, c, n // self.width, self.width), dtype=grad.dtype)
        np.put_along_axis(dx, self._idx, grad[..., None], axis=-1)
        return dx.reshape(self._shape)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0).astype(grad.dtype, copy=False)


class BatchNorm(Layer):
    """Per-feature (2-d input) or per-channel (3-d input) batch normalization.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``
    and replace the batch statistics outside training.
    """

    def __init__(self, n_features, momentum=0.9, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(n_features, dtype)
        self.params["beta"] = np.zeros(n_features, dtype)
        self.buffers["running_mean"] = np.zeros(n_features, dtype)
        self.buffers["running_var"] = np.ones(n_features, dtype)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2)

    def _bcast(self, v, ndim):
        return v[None, :] if ndim == 2 else v[None, :, None]

    def forward(self, x, training=False):
        axes = self._axes(x)
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError("batch norm needs at least 2 samples in training mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // x.shape[1]
            m = self.momentum
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["running_var"] = (
                m * self.buffers["running_var"] + (1 - m) * var * n / (n - 1)
            ).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        self._training = training
        self._inv_std = self._bcast(1.0 / np.sqrt(var + self.eps), x.ndim).astype(x.dtype)
        self._xhat = (x - self._bcast(mean, x.ndim)) * self._inv_std
        return self._xhat * self._bcast(self.params["gamma"], x.ndim) + self._bcast(
            self.params["beta"], x.ndim
        )

    def backward(self, grad):
        axes = self._axes(grad)
        ndim = grad.ndim
        self.grads["gamma"] = (grad * self._xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self._bcast(self.params["gamma"], ndim)
        if not self._training:
            return dxhat * self._inv_std
        n = grad.size // grad.shape[1]
        s1 = self._bcast(dxhat.sum(axis=axes), ndim)
        s2 = self._bcast((dxhat * self._xhat).sum(axis=axes), ndim)
        return self._inv_std * (dxhat - s1 / n - self._xhat * s2 / n)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.params["W"] = _uniform_init(rng, (n_out, n_in), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[1]:
            raise InvalidArgumentError(
                f"Dense expects (batch, {self.params['W'].shape[1]}), got {x.shape}"
            )
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = grad.T @ self._x
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"]


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-p) while training."""

    def __init__(self, p=0.5, rng=None):
        super().__init__()
        if not 0 <= p < 1:
            raise InvalidArgumentError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = np.random.default_rng() if rng is None else rng
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.p == 0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Flatten(Layer):
    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class GradientReversal(Layer):
    """Identity forward; backward multiplies the incoming gradient by ``-lam``."""

    def __init__(self, lam=1.0):
        super().__init__()
        self.lam = lam

    def forward(self, x, training=False):
        return x

    def backward(self, grad):
        return -self.lam * grad


class Softmax(Layer):
    def forward(self, x, training=False):
        z = np.exp(x - x.max(axis=1, keepdims=True))
        self._y = z / z.sum(axis=1, keepdims=True)
        return self._y

    def backward(self, grad):
        y = self._y
        return y * (grad - (grad * y).sum(axis=1, keepdims=True))


def softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def cross_entropy(pred, labels):
    """Mean of ``-log pred[label]`` with probabilities floored at 1e-12."""
    pred = np.atleast_2d(pred)
    labels = np.atleast_1d(np.asarray(labels))
    picked = pred[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def cross_entropy_backward(pred, labels):
    """Gradient of :func:`cross_entropy` with respect to ``pred``."""
    pred = np.atleast_2d(pred)
    labels = np.atleast_1d(np.asarray(labels))
    rows = np.arange(len(labels))
    picked = pred[rows, labels]
    grad = np.zeros_like(pred)
    grad[rows, labels] = np.where(picked > PROB_FLOOR, -1.0 / np.maximum(picked, PROB_FLOOR), 0.0)
    return grad / len(labels)


def softmax_cross_entropy_backward(pred, labels):
    """Gradient of the mean loss with respect to the logits: (pred - one_hot) / batch."""
    grad = np.array(pred, copy=True)
    grad[np.arange(len(labels)), labels] -= 1
    return grad / len(labels)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_layers(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}{i}", layer
