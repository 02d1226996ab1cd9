"""Conv1D + dense ELU regressor with hand-written backpropagation and Adam.

Shapes used throughout: a batch of inputs is ``(B, n_x)``; the conv layer sees
it as ``(B, 1, n_x)`` and emits feature maps ``(B, O, n_x)``, flattened
channel-major into ``(B, O * n_x)`` before the dense stack.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError

logger = logging.getLogger(__name__)


@dataclass
class Conv1DLayer:
    W: np.ndarray  # (out_channels, in_channels, kernel_size)
    b: np.ndarray  # (out_channels,)
    padding: str = "same"
    stride: int = 1

    def __post_init__(self):
        if self.W.ndim != 3 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent conv shapes W{self.W.shape} b{self.b.shape}")
        if self.padding not in ("same", "valid") or self.stride != 1:
            raise ValueError("only stride 1 with 'same' or 'valid' padding is supported")

    @property
    def out_channels(self) -> int:
        return self.W.shape[0]

    @property
    def in_channels(self) -> int:
        return self.W.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.W.shape[2]

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size

    def output_length(self, n: int) -> int:
        return n if self.padding == "same" else n - self.kernel_size + 1


@dataclass
class DenseLayer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "elu"

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")
        if self.activation not in ("elu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class NeuralNet:
    conv: Conv1DLayer
    hidden1: DenseLayer
    hidden2: DenseLayer
    output: DenseLayer
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.hidden1.W.shape[1] != self.hidden2.W.shape[0] or \
                self.hidden2.W.shape[1] != self.output.W.shape[0] or self.output.W.shape[1] != 1:
            raise ValueError("dense layer shapes do not chain to a scalar output")

    @classmethod
    def initialize(cls, n_x: int, rng: np.random.Generator, conv_channels: int = 16,
                   kernel_size: int = 3, hidden_units: int = 100, huber_delta: float = 1.0):
        """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) init for every weight and bias."""

        def uniform(fan_in, shape):
            bound = np.sqrt(1.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape)

        conv_fan_in = kernel_size
        conv = Conv1DLayer(uniform(conv_fan_in, (conv_channels, 1, kernel_size)),
                           uniform(conv_fan_in, (conv_channels,)))
        flat = conv_channels * conv.output_length(n_x)
        layers = []
        for fan_in, fan_out, act in ((flat, hidden_units, "elu"),
                                     (hidden_units, hidden_units, "elu"),
                                     (hidden_units, 1, "linear")):
            layers.append(DenseLayer(uniform(fan_in, (fan_in, fan_out)), uniform(fan_in, (fan_out,)), act))
        return cls(conv, *layers, huber_delta=huber_delta)

    @property
    def n_x(self) -> int:
        return self.hidden1.W.shape[0] // self.conv.out_channels

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (the order used for gradients and serialization)."""
        return [self.conv.W, self.conv.b,
                self.hidden1.W, self.hidden1.b,
                self.hidden2.W, self.hidden2.b,
                self.output.W, self.output.b]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "NeuralNet":
        p = [a.copy() for a in self.parameters()]
        return NeuralNet(Conv1DLayer(p[0], p[1], self.conv.padding, self.conv.stride),
                         DenseLayer(p[2], p[3], self.hidden1.activation),
                         DenseLayer(p[4], p[5], self.hidden2.activation),
                         DenseLayer(p[6], p[7], self.output.activation),
                         self.huber_delta)

    def flatten_parameters(self) -> np.ndarray:
        """Move every parameter into one contiguous buffer and rebind the layers to views of it."""
        params = self.parameters()
        flat = np.concatenate([p.ravel() for p in params])
        views, offset = [], 0
        for p in params:
            views.append(flat[offset:offset + p.size].reshape(p.shape))
            offset += p.size
        self.conv.W, self.conv.b, self.hidden1.W, self.hidden1.b, \
            self.hidden2.W, self.hidden2.b, self.output.W, self.output.b = views
        return flat

    def predict(self, X) -> np.ndarray:
        return forward(self, np.atleast_2d(X))[0]


def elu(z):
    """ELU with alpha = 1."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _activate(z, activation):
    return elu(z) if activation == "elu" else z


def _pad(x: np.ndarray, layer: Conv1DLayer) -> np.ndarray:
    if layer.padding == "valid":
        return x
    k = layer.kernel_size
    left = (k - 1) // 2
    out = np.zeros(x.shape[:2] + (x.shape[2] + k - 1,))
    out[:, :, left:left + x.shape[2]] = x
    return out


def _im2col(x: np.ndarray, layer: Conv1DLayer) -> np.ndarray:
    """Sliding windows of the padded input as a ``(B * L_out, K * kernel)`` matrix."""
    win = sliding_window_view(_pad(x, layer), layer.kernel_size, axis=2)  # (B, K, L, k)
    B, K, L, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * L, K * k)


def _conv_apply(cols: np.ndarray, layer: Conv1DLayer, batch: int) -> np.ndarray:
    out = cols @ layer.W.reshape(layer.out_channels, -1).T + layer.b
    return out.reshape(batch, -1, layer.out_channels).transpose(0, 2, 1)


def conv1d_forward(x, layer: Conv1DLayer) -> np.ndarray:
    """Cross-correlate ``x`` with every filter and add the channel bias.

    ``x`` may be a single feature vector ``(n,)`` (one input channel), a
    channel stack ``(K, n)`` or a batch ``(B, K, n)``; the result keeps the
    leading batch axis only when one was given.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim < 3
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[None]
    if x.shape[1] != layer.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    if layer.output_length(x.shape[2]) < 1:
        raise ValueError("input shorter than the kernel")
    out = _conv_apply(_im2col(x, layer), layer, x.shape[0])
    return out[0] if squeeze else out


@dataclass
class ForwardCache:
    windows: np.ndarray  # im2col matrix of the padded input
    z1: np.ndarray
    z2: np.ndarray
    flat: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


def forward(net: NeuralNet, X) -> tuple:
    """Run the network on ``X``.

    Returns ``(yhat, cache)``: a float for a single vector, an array ``(B,)``
    for a batch.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None] if single else X
    if X2.ndim != 2 or X2.shape[1] * net.conv.out_channels != net.hidden1.W.shape[0]:
        raise ValueError(f"input shape {X.shape} does not match the network (n_x={net.n_x})")
    windows = _im2col(X2[:, None, :], net.conv)
    flat = _conv_apply(windows, net.conv, X2.shape[0]).reshape(X2.shape[0], -1)
    z1 = flat @ net.hidden1.W + net.hidden1.b
    h1 = _activate(z1, net.hidden1.activation)
    z2 = h1 @ net.hidden2.W + net.hidden2.b
    h2 = _activate(z2, net.hidden2.activation)
    out = _activate(h2 @ net.output.W + net.output.b, net.output.activation)[:, 0]
    cache = ForwardCache(windows, z1, z2, flat, h1, h2)
    return (float(out[0]) if single else out), cache


def huber_loss(y, yhat, delta: float = 1.0):
    """Elementwise Huber loss: quadratic within ``delta`` of zero residual, linear beyond."""
    if delta <= 0:
        raise ValueError(f"huber delta must be positive, got {delta}")
    r = np.abs(np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64))
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(y, yhat, delta: float = 1.0):
    """Derivative of :func:`huber_loss` with respect to ``yhat``."""
    if delta <= 0:
        raise ValueError(f"huber delta must be positive, got {delta}")
    g = np.clip(np.asarray(yhat, dtype=np.float64) - np.asarray(y, dtype=np.float64), -delta, delta)
    return float(g) if g.ndim == 0 else g


def _check_pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise ValueError("empty vectors")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _check_pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat) -> float:
    y, yhat = _check_pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def backward(net: NeuralNet, cache: ForwardCache, yhat, y) -> list[np.ndarray]:
    """Gradients of the batch-mean Huber loss, aligned with ``net.parameters()``."""
    yhat = np.atleast_1d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    B = yhat.shape[0]
    g_out = (huber_grad(y, yhat, net.huber_delta) / B)[:, None]
    if net.output.activation == "elu":
        g_out = g_out * elu_grad(cache.h2 @ net.output.W + net.output.b)
    dW3 = cache.h2.T @ g_out
    db3 = g_out.sum(axis=0)

    g2 = g_out @ net.output.W.T
    if net.hidden2.activation == "elu":
        g2 = g2 * elu_grad(cache.z2)
    dW2 = cache.h1.T @ g2
    db2 = g2.sum(axis=0)

    g1 = g2 @ net.hidden2.W.T
    if net.hidden1.activation == "elu":
        g1 = g1 * elu_grad(cache.z1)
    dW1 = cache.flat.T @ g1
    db1 = g1.sum(axis=0)

    # kernel gradient accumulates over every sliding position
    O = net.conv.out_channels
    g_map = (g1 @ net.hidden1.W.T).reshape(B, O, -1).transpose(0, 2, 1).reshape(-1, O)
    dWc = (g_map.T @ cache.windows).reshape(net.conv.W.shape)
    dbc = g_map.sum(axis=0)
    return [dWc, dbc, dW1, db1, dW2, db2, dW3, db3]


def loss_and_grads(net: NeuralNet, X, y) -> tuple[float, list[np.ndarray]]:
    """Batch-mean Huber loss and its gradient for every parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    yhat, cache = forward(net, X)
    loss = float(np.mean(huber_loss(y, yhat, net.huber_delta)))
    return loss, backward(net, cache, yhat, y)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    step = state.lr / c1
    inv_c2 = 1.0 / np.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} grad {g.shape}")
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        # p -= lr * m_hat / (sqrt(v_hat) + eps), computed with in-place buffers
        np.sqrt(v, out=tmp)
        tmp *= inv_c2
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    huber_delta: float = 1.0
    conv_channels: int = 16
    kernel_size: int = 3
    hidden_units: int = 100


@dataclass
class TrainReport:
    """Per-epoch mean Huber loss, plus two end-of-training summaries over the
    training rows: ``l_n`` (mean absolute residual) and ``final_loss`` (mean Huber)."""

    epoch_losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    l_n: float = 0.0
    final_loss: float = 0.0


def train_network(X, y, config: TrainConfig | None = None, seed=0) -> tuple[NeuralNet, TrainReport]:
    """Mini-batch Adam on the Huber loss.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts; it drives
    both initialization and per-epoch shuffling. The report's ``l_n`` is the
    mean absolute residual of the final network over the training rows.
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    if n == 0 or y.shape[0] != n:
        raise ValueError(f"need a non-empty training set with aligned targets ({n} rows, {y.shape[0]} targets)")
    rng = np.random.default_rng(seed)
    net = NeuralNet.initialize(X.shape[1], rng, config.conv_channels, config.kernel_size,
                               config.hidden_units, config.huber_delta)
    params = [net.flatten_parameters()]
    state = AdamState.for_params(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    bs = max(1, int(config.batch_size))
    losses = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grads(net, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch + 1}, batch offset {start}")
            adam_step(params, [np.concatenate([g.ravel() for g in grads])], state)
            total += loss * idx.size
        losses[epoch] = total / n
        if (epoch + 1) % 100 == 0:
            logger.debug("epoch %d mean loss %.6g", epoch + 1, losses[epoch])
    yhat = net.predict(X)
    residual = np.abs(yhat - y)
    if not np.all(np.isfinite(residual)):
        raise NumericalError("trained network produces non-finite predictions on its training set")
    final = float(np.mean(huber_loss(y, yhat, net.huber_delta)))
    return net, TrainReport(losses, float(residual.mean()), final)
