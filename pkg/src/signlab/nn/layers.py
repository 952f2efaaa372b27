"""NumPy layers with explicit forward/backward passes.

Arrays are NCHW for images and (N, D) for vectors.  Each layer caches what
its backward pass needs during ``forward`` and writes parameter gradients
into ``self.grads``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import SignLabError


class ShapeMismatch(SignLabError, ValueError):
    pass


class NonFiniteTensor(SignLabError, FloatingPointError):
    pass


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteTensor(f"non-finite values in {what}")
    return x


class Layer:
    name = "layer"
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    @property
    def has_params(self) -> bool:
        return bool(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> None:
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self.grads = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return self.name


class Conv2D(Layer):
    """Valid-padding cross-correlation with a square kernel."""

    name = "conv"

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(2.0 / (c_in * k * k))
        self.params["W"] = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"conv expects (N, {self.c_in}, H, W), got {x.shape}")
        if x.shape[2] < self.k or x.shape[3] < self.k:
            raise ShapeMismatch(f"input {x.shape[2:]} smaller than kernel {self.k}")
        s = self.stride
        win = sliding_window_view(x, (self.k, self.k), axis=(2, 3))[:, :, ::s, ::s]
        self._cache = (x.shape, win)
        out = np.tensordot(win, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        out += self.params["b"]
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, dout):
        shape, win = self._cache
        W = self.params["W"]
        self.grads["W"] = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        n, _, ho, wo = dout.shape
        s, k = self.stride, self.k
        dcols = np.tensordot(dout, W, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
        dx = np.zeros(shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def describe(self):
        return f"conv{self.k}x{self.k}({self.c_in}->{self.c_out},s{self.stride})"


class Normalize(Layer):
    """Fixed affine input normalisation ``(x - mean) / std``; no parameters."""

    name = "normalize"

    def __init__(self, mean: float = 0.5, std: float = 1.0):
        super().__init__()
        self.mean, self.std = mean, std

    def forward(self, x):
        return (x - x.dtype.type(self.mean)) / x.dtype.type(self.std)

    def backward(self, dout):
        return dout / dout.dtype.type(self.std)


class ReLU(Layer):
    name = "relu"

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    name = "maxpool2"

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if h2 < 1 or w2 < 1:
            raise ShapeMismatch(f"maxpool2 input {x.shape[2:]} too small")
        blocks = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        idx = blocks.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, idx = self._cache
        n, c, h, w = shape
        h2, w2 = dout.shape[2:]
        blocks = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :, :2 * h2, :2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
        return dx


class GlobalAvgPool(Layer):
    name = "global_avg_pool"

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), self._shape).copy()


class Dense(Layer):
    name = "dense"

    def __init__(self, d_in: int, d_out: int, rng=None, dtype=np.float32):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = (rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)).astype(dtype)
        self.params["b"] = np.zeros(d_out, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeMismatch(f"dense expects (N, {self.d_in}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T

    def describe(self):
        return f"dense({self.d_in}->{self.d_out})"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_sum - z[np.arange(n), labels]))
    p = np.exp(z - log_sum[:, None])
    p[np.arange(n), labels] -= 1.0
    return loss, (p / n).astype(logits.dtype)
