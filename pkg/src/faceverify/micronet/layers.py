"""Network layers with explicit forward/backward passes.

All activations are NHWC.  Layers cache whatever the backward pass
needs on the instance, so training is a strictly sequential
forward -> backward -> update cycle; a layer instance must not be
shared between concurrent passes.

Compute dtype follows the parameter dtype chosen at construction
(float64 by default; float32 roughly halves memory traffic for
desk-scale training runs).  Gradient checks always run float64.

Parameter conventions:
  - conv weights are (3, 3, c_in, c_out), flattened row-major when
    serialized; biases are (c_out,) and start at zero
  - dense weights are (d_in, d_out)
  - PReLU keeps one trainable slope per channel (last axis)
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Conv3x3",
    "PReLU",
    "CrossChannelNorm",
    "MaxPool2x2",
    "GlobalAvgPool",
    "Dropout",
    "Dense",
    "SoftmaxXent",
    "prelu",
    "softmax",
]


def prelu(x, slope):
    """Parametric rectifier: x for x >= 0, slope * x otherwise."""
    return np.where(np.asarray(x) >= 0, x, slope * np.asarray(x))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for numerical stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Layer:
    """Base class: parameter-free layers only override forward/backward."""

    kind = "layer"

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self):
        """(name, value array, grad array, decay group) per parameter."""
        return []

    def weight_count(self, include_biases: bool = False) -> int:
        return 0


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved).

    Implemented as nine shift-and-GEMM accumulations against the padded
    input, which keeps peak memory at one padded copy of the input
    instead of a full im2col buffer.
    """

    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int, dtype=np.float64):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.dtype = dtype
        self.weights = np.zeros((3, 3, in_channels, out_channels), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._xp = None

    def initialize(self, rng: np.random.Generator, std: float) -> None:
        self.weights = rng.normal(0.0, std, self.weights.shape).astype(self.dtype)
        self.bias = np.zeros(self.out_channels, dtype=self.dtype)

    def _pad(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        xp = np.zeros((n, h + 2, w + 2, c), dtype=self.dtype)
        xp[:, 1:-1, 1:-1, :] = x
        return xp

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValueError(f"conv3x3 expects (n, h, w, {self.in_channels}), got {x.shape}")
        n, h, w, _ = x.shape
        xp = self._pad(x)
        out = np.empty((n, h, w, self.out_channels), dtype=self.dtype)
        out[:] = self.bias
        flat = out.reshape(n * h * w, self.out_channels)
        for di in range(3):
            for dj in range(3):
                patch = np.ascontiguousarray(xp[:, di : di + h, dj : dj + w, :])
                flat += patch.reshape(n * h * w, self.in_channels) @ self.weights[di, dj]
        self._xp = xp if train else None
        self._x_shape = x.shape
        return out

    def backward(self, grad_out):
        if self._xp is None:
            raise RuntimeError("backward requires a train-mode forward pass")
        n, h, w, _ = self._x_shape
        g2 = np.ascontiguousarray(grad_out).reshape(n * h * w, self.out_channels)
        self.grad_bias = g2.sum(axis=0)
        self.grad_weights = np.empty_like(self.weights)
        dxp = np.zeros_like(self._xp)
        for di in range(3):
            for dj in range(3):
                patch = np.ascontiguousarray(self._xp[:, di : di + h, dj : dj + w, :])
                self.grad_weights[di, dj] = patch.reshape(n * h * w, self.in_channels).T @ g2
                dpatch = g2 @ self.weights[di, dj].T
                dxp[:, di : di + h, dj : dj + w, :] += dpatch.reshape(n, h, w, self.in_channels)
        return dxp[:, 1:-1, 1:-1, :]

    def param_items(self):
        return [
            ("weights", self.weights, self.grad_weights, "conv"),
            ("bias", self.bias, self.grad_bias, "none"),
        ]

    def weight_count(self, include_biases=False):
        return self.weights.size + (self.bias.size if include_biases else 0)


class PReLU(Layer):
    """Per-channel parametric rectifier with trainable negative slopes."""

    kind = "prelu"

    def __init__(self, channels: int, init_slope: float = 0.25, dtype=np.float64):
        self.channels = channels
        self.dtype = dtype
        self.slope = np.full(channels, init_slope, dtype=dtype)
        self.grad_slope = np.zeros_like(self.slope)
        self._x = None
        self._neg = None

    def initialize(self, rng, std):  # slopes keep their fixed init
        pass

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.channels:
            raise ValueError(f"prelu expects {self.channels} channels, got {x.shape}")
        # y = max(x, 0) + slope * min(x, 0), built without boolean masks
        neg_part = np.minimum(x, 0)
        out = np.maximum(x, 0)
        neg_part *= self.slope
        out += neg_part
        if train:
            self._x = x
            self._neg = x < 0
        return out

    def backward(self, grad_out):
        x, neg = self._x, self._neg
        gx = grad_out * x
        gx *= neg
        self.grad_slope = gx.reshape(-1, self.channels).sum(axis=0)
        coeff = np.where(neg, self.slope, np.asarray(1.0, dtype=grad_out.dtype))
        return grad_out * coeff

    def param_items(self):
        return [("slope", self.slope, self.grad_slope, "none")]

    def weight_count(self, include_biases=False):
        return 0  # slopes are trainable but not counted as weights


class CrossChannelNorm(Layer):
    """Local normalization across channels.

    out = x / (k + (alpha / size) * sum_{j in window} x_j^2)^beta, with a
    window of `size` channels centered on each channel and clipped at the
    channel boundaries.
    """

    kind = "lrn"

    def __init__(self, size: int = 5, alpha: float = 1e-4, beta: float = 0.75, k: float = 1.0):
        if size % 2 != 1:
            raise ValueError(f"window size must be odd, got {size}")
        self.size = size
        self.alpha = alpha
        self.beta = beta
        self.k = k
        self._x = None
        self._denom = None
        self._scale = None

    def _window_sum(self, v: np.ndarray) -> np.ndarray:
        """Sliding sum over the channel axis, window clipped at the edges."""
        half = (self.size - 1) // 2
        out = v.copy()
        for off in range(1, half + 1):
            out[..., :-off] += v[..., off:]
            out[..., off:] += v[..., :-off]
        return out

    def forward(self, x, train=False, rng=None):
        denom = self._window_sum(x * x)
        denom *= self.alpha / self.size
        denom += self.k
        scale = denom ** (-self.beta)
        out = x * scale
        if train:
            self._x, self._denom, self._scale = x, denom, scale
        return out

    def backward(self, grad_out):
        x, denom, scale = self._x, self._denom, self._scale
        # d(out_c)/d(x_i) couples channels whose windows overlap; the
        # correction reuses the same symmetric window sum, and
        # denom^(-beta-1) is recovered as scale/denom to avoid a second pow.
        inner = grad_out * x
        inner *= scale / denom
        correction = self._window_sum(inner)
        correction *= x
        correction *= 2.0 * self.alpha * self.beta / self.size
        return grad_out * scale - correction


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2, ceil-mode output size ceil(n/2)."""

    kind = "maxpool2x2s2"

    def __init__(self):
        self._idx = None
        self._x_shape = None

    @staticmethod
    def _windows(x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        ho, wo = (h + 1) // 2, (w + 1) // 2
        if h % 2 or w % 2:
            xp = np.full((n, 2 * ho, 2 * wo, c), -np.inf, dtype=x.dtype)
            xp[:, :h, :w, :] = x
        else:
            xp = x
        win = np.empty((n, ho, wo, 4, c), dtype=x.dtype)
        win[:, :, :, 0, :] = xp[:, 0::2, 0::2, :]
        win[:, :, :, 1, :] = xp[:, 0::2, 1::2, :]
        win[:, :, :, 2, :] = xp[:, 1::2, 0::2, :]
        win[:, :, :, 3, :] = xp[:, 1::2, 1::2, :]
        return win

    def forward(self, x, train=False, rng=None):
        win = self._windows(x)
        idx = win.argmax(axis=3)
        out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        if train:
            self._idx, self._x_shape = idx, x.shape
        return out

    def backward(self, grad_out):
        n, h, w, c = self._x_shape
        ho, wo = (h + 1) // 2, (w + 1) // 2
        dwin = np.zeros((n, ho, wo, 4, c), dtype=grad_out.dtype)
        np.put_along_axis(dwin, self._idx[:, :, :, None, :], grad_out[:, :, :, None, :], axis=3)
        dxp = np.zeros((n, 2 * ho, 2 * wo, c), dtype=grad_out.dtype)
        dxp[:, 0::2, 0::2, :] = dwin[:, :, :, 0, :]
        dxp[:, 0::2, 1::2, :] = dwin[:, :, :, 1, :]
        dxp[:, 1::2, 0::2, :] = dwin[:, :, :, 2, :]
        dxp[:, 1::2, 1::2, :] = dwin[:, :, :, 3, :]
        return dxp[:, :h, :w, :]


class GlobalAvgPool(Layer):
    """Average over all spatial positions: (n, h, w, c) -> (n, c)."""

    kind = "avgpool_global"

    def __init__(self):
        self._x_shape = None

    def forward(self, x, train=False, rng=None):
        if train:
            self._x_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad_out):
        n, h, w, c = self._x_shape
        return np.broadcast_to(grad_out[:, None, None, :] / (h * w), (n, h, w, c)).copy()


class Dropout(Layer):
    """Inverted dropout: scales kept units by 1/(1-rate) at train time,
    so the eval path is exactly the identity."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        self._mask = ((rng.random(x.shape) < keep) / keep).astype(x.dtype)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class Dense(Layer):
    """Fully connected layer on flattened inputs."""

    kind = "fully_connected"

    def __init__(self, in_features: int, out_features: int, dtype=np.float64):
        self.in_features = in_features
        self.out_features = out_features
        self.dtype = dtype
        self.weights = np.zeros((in_features, out_features), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def initialize(self, rng, std):
        self.weights = rng.normal(0.0, std, self.weights.shape).astype(self.dtype)
        self.bias = np.zeros(self.out_features, dtype=self.dtype)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"dense expects (n, {self.in_features}), got {x.shape}")
        self._x = x if train else None
        return x @ self.weights + self.bias

    def backward(self, grad_out):
        self.grad_weights = self._x.T @ grad_out
        self.grad_bias = grad_out.sum(axis=0)
        return grad_out @ self.weights.T

    def param_items(self):
        return [
            ("weights", self.weights, self.grad_weights, "fc"),
            ("bias", self.bias, self.grad_bias, "none"),
        ]

    def weight_count(self, include_biases=False):
        return self.weights.size + (self.bias.size if include_biases else 0)


class SoftmaxXent(Layer):
    """Softmax with mean cross-entropy loss; forward emits probabilities."""

    kind = "softmax_xent"

    def __init__(self):
        self._probs = None

    def forward(self, logits, train=False, rng=None):
        probs = softmax(logits)
        if train:
            self._probs = probs
        return probs

    def loss(self, labels: np.ndarray) -> float:
        n = self._probs.shape[0]
        p = self._probs[np.arange(n), labels]
        return float(-np.log(np.maximum(p, 1e-300)).mean())

    def backward_from_labels(self, labels: np.ndarray) -> np.ndarray:
        """Gradient of the mean cross-entropy w.r.t. the logits."""
        n = self._probs.shape[0]
        grad = self._probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return grad / n
