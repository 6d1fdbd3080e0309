"""Forward and backward kernels for every layer primitive used by the models.

All kernels are plain numpy on ``(batch, channels, length)`` arrays. The
public forward functions accept and return :class:`Tensor`; backward
functions return raw arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, ShapeError
from .tensor import Tensor, as_tensor

CONV_MODES = ("standard", "depthwise", "pointwise")
N_CLASSES = 5


def conv_output_length(length, kernel_size, stride=1, padding=0):
    return (length + 2 * padding - kernel_size) // stride + 1


@dataclass
class ConvParams:
    """Weights and geometry of one 1D convolution.

    ``weight`` has shape ``(C_out, C_in, k)`` for standard convolutions,
    ``(C_in, 1, k)`` for depthwise and ``(C_out, C_in, 1)`` for pointwise.
    """

    weight: np.ndarray
    bias: np.ndarray = None
    stride: int = 1
    padding: int = 0
    mode: str = "standard"

    def __post_init__(self):
        if self.mode not in CONV_MODES:
            raise ConfigError(f"unknown convolution mode {self.mode!r}")
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 3:
            raise ShapeError(f"conv weight must be rank 3, got shape {self.weight.shape}")
        if self.mode == "depthwise" and self.weight.shape[1] != 1:
            raise ShapeError("depthwise weight must have shape (C_in, 1, k)")
        if self.mode == "pointwise" and self.weight.shape[2] != 1:
            raise ShapeError("pointwise weight must have kernel size 1")
        if self.stride < 1 or self.padding < 0:
            raise ConfigError("stride must be >= 1 and padding >= 0")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.out_channels,):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match out_channels={self.out_channels}"
                )

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    @property
    def in_channels(self):
        return self.weight.shape[0] if self.mode == "depthwise" else self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def output_length(self, length):
        return conv_output_length(length, self.kernel_size, self.stride, self.padding)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, channels, dtype=np.float64, **kwargs):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            **kwargs,
        )

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"BatchNorm {name} has {len(getattr(self, name))} channels, expected {n}")
        if not self.epsilon > 0:
            raise ConfigError("BatchNorm epsilon must be positive")

    @property
    def channels(self):
        return len(self.gamma)


@dataclass
class DenseParams:
    weight: np.ndarray  # (n_classes, C)
    bias: np.ndarray = field(default=None)


# -- convolution -----------------------------------------------------------


def _check_conv_input(x, params):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be rank 3, got shape {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"channels mismatch: input has {x.shape[1]} channels, layer expects C_in={params.in_channels}"
        )
    l_out = params.output_length(x.shape[2])
    if l_out < 1:
        raise ShapeError(
            f"length {x.shape[2]} too short for kernel_size={params.kernel_size}, padding={params.padding}"
        )
    return l_out


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding)))


def _tap(xp, j, stride, l_out):
    """Input samples seen by kernel tap ``j`` across all output positions."""
    return xp[:, :, j : j + stride * (l_out - 1) + 1 : stride]


def _im2col(xp, k, stride, l_out):
    """``(N, k*C_in, L')`` with tap-major rows; contiguous so matmul stays on BLAS."""
    if k == 1 and stride == 1:
        return xp[:, :, :l_out]
    return np.concatenate([_tap(xp, j, stride, l_out) for j in range(k)], axis=1)


def _flat_weight(w):
    # (C_out, C_in, k) -> (C_out, k*C_in), matching _im2col's row order
    return w.transpose(0, 2, 1).reshape(w.shape[0], -1)


def conv1d_forward(input, params):
    x = as_tensor(input).data
    l_out = _check_conv_input(x, params)
    xp = _pad(x, params.padding)
    w, s = params.weight, params.stride
    if params.mode == "depthwise":
        k = params.kernel_size
        out = w[None, :, 0, 0, None] * _tap(xp, 0, s, l_out)
        for j in range(1, k):
            out += w[None, :, 0, j, None] * _tap(xp, j, s, l_out)
    else:
        out = np.matmul(_flat_weight(w), _im2col(xp, params.kernel_size, s, l_out))
    if params.bias is not None:
        out = out + params.bias[None, :, None]
    return Tensor(np.ascontiguousarray(out, dtype=x.dtype))


def conv1d_backward(output_grad, saved_input, params):
    """Gradients of a convolution w.r.t. its input, weight and bias.

    Returns ``(input_grad, weight_grad, bias_grad)``; ``bias_grad`` is None
    for bias-free layers.
    """
    if saved_input is None:
        raise ConfigError("conv1d_backward requires the saved forward input")
    x = as_tensor(saved_input).data
    g = as_tensor(output_grad).data
    l_out = _check_conv_input(x, params)
    expected = (x.shape[0], params.out_channels, l_out)
    if g.shape != expected:
        raise ShapeError(f"output_grad shape {g.shape} does not match forward output {expected}")

    xp = _pad(x, params.padding)
    dxp = np.zeros_like(xp)
    w, s, k = params.weight, params.stride, params.kernel_size
    stop = lambda j: j + s * (l_out - 1) + 1  # noqa: E731

    if params.mode != "depthwise":
        cols = _im2col(xp, k, s, l_out)
        dw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        dw = dw.reshape(w.shape[0], k, w.shape[1]).transpose(0, 2, 1)
        dcols = np.matmul(_flat_weight(w).T, g)
        c = w.shape[1]
        for j in range(k):
            dxp[:, :, j : stop(j) : s] += dcols[:, j * c : (j + 1) * c]
    else:
        dw = np.empty_like(w)
        for j in range(k):
            dw[:, 0, j] = (g * _tap(xp, j, s, l_out)).sum(axis=(0, 2))
            dxp[:, :, j : stop(j) : s] += g * w[None, :, 0, j, None]

    p = params.padding
    dx = dxp[:, :, p : xp.shape[2] - p] if p else dxp
    db = g.sum(axis=(0, 2)) if params.bias is not None else None
    return np.ascontiguousarray(dx), dw.astype(w.dtype, copy=False), db


# -- batch normalisation ---------------------------------------------------


def batchnorm1d_forward(x, params, training):
    """Return ``(output, cache)``; ``cache`` is what the backward pass needs."""
    if x.ndim != 3 or x.shape[1] != params.channels:
        raise ShapeError(
            f"channels mismatch: input shape {x.shape}, BatchNorm has {params.channels} channels"
        )
    if training:
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        n = x.shape[0] * x.shape[2]
        m = params.momentum
        params.running_mean[...] = (1 - m) * params.running_mean + m * mean
        unbiased = var * n / (n - 1) if n > 1 else var
        params.running_var[...] = (1 - m) * params.running_var + m * unbiased
    else:
        mean = params.running_mean
        var = params.running_var
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = params.gamma[None, :, None] * xhat + params.beta[None, :, None]
    return out.astype(x.dtype, copy=False), (xhat, inv_std, training)


def batchnorm1d(input, params, training=False):
    out, _ = batchnorm1d_forward(as_tensor(input).data, params, training)
    return Tensor(out)


def batchnorm1d_backward(output_grad, cache, params):
    """Return ``(input_grad, gamma_grad, beta_grad)``."""
    xhat, inv_std, training = cache
    g = output_grad
    dgamma = np.einsum("ncl,ncl->c", g, xhat)
    dbeta = g.sum(axis=(0, 2))
    gamma = params.gamma[None, :, None]
    istd = inv_std[None, :, None]
    if not training:
        return g * gamma * istd, dgamma, dbeta
    n = g.shape[0] * g.shape[2]
    # with dxhat = g * gamma: sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
    dx = (gamma * istd / n) * (n * g - dbeta[None, :, None] - xhat * dgamma[None, :, None])
    return dx.astype(g.dtype, copy=False), dgamma, dbeta


# -- activations and pooling ---------------------------------------------


def relu(input):
    x = as_tensor(input).data
    return Tensor(np.maximum(x, 0))


def relu_backward(output_grad, saved_input):
    # subgradient at exactly 0 is 0
    return output_grad * (saved_input > 0)


def global_avg_pool(input):
    x = as_tensor(input).data
    if x.shape[2] < 1:
        raise ShapeError("global_avg_pool needs length >= 1")
    return Tensor(x.mean(axis=2, keepdims=True))


def global_avg_pool_backward(output_grad, input_length):
    if input_length < 1:
        raise ShapeError("global_avg_pool needs length >= 1")
    return np.repeat(output_grad / input_length, input_length, axis=2)


# -- classifier head -----------------------------------------------------


def dense_forward(x, params):
    """``x`` is ``(N, C)`` or ``(N, C, 1)``; returns logits ``(N, n_classes)``."""
    x = np.asarray(x)
    if x.ndim == 3:
        if x.shape[2] != 1:
            raise ShapeError(f"dense input must have length 1, got {x.shape}")
        x = x[:, :, 0]
    if x.shape[1] != params.weight.shape[1]:
        raise ShapeError(
            f"channels mismatch: dense input has {x.shape[1]} features, weight expects {params.weight.shape[1]}"
        )
    logits = x @ params.weight.T
    if params.bias is not None:
        logits = logits + params.bias
    return logits


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def check_labels(labels, n_classes=N_CLASSES):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.dtype.kind not in "iu":
        raise ConfigError("labels must be a 1-D integer array of class indices")
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise ConfigError(f"label {labels[bad][0]} outside [0, {n_classes})")
    return labels


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood. Returns ``(loss, probabilities, dlogits)``."""
    labels = check_labels(labels, logits.shape[1])
    if len(labels) != len(logits):
        raise ShapeError(f"{len(labels)} labels for {len(logits)} samples")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - logsumexp
    n = len(labels)
    loss = float(-log_p[np.arange(n), labels].mean())
    probs = np.exp(log_p)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits


def dense_backward(dlogits, x, params):
    """Return ``(input_grad, weight_grad, bias_grad)``; input grad keeps ``x``'s rank."""
    x = np.asarray(x)
    flat = x[:, :, 0] if x.ndim == 3 else x
    dx = dlogits @ params.weight
    dw = dlogits.T @ flat
    db = dlogits.sum(axis=0) if params.bias is not None else None
    if x.ndim == 3:
        dx = dx[:, :, None]
    return dx, dw, db


def dense_softmax_ce(input, weights, labels):
    """Linear classifier, softmax and mean cross-entropy in one call.

    ``weights`` is a :class:`DenseParams`. Returns ``(loss, probabilities,
    grads)`` where ``grads`` holds ``input``, ``weight``, ``bias`` and
    ``logits`` gradients.
    """
    x = input.data if isinstance(input, Tensor) else np.asarray(input)
    logits = dense_forward(x, weights)
    if logits.shape[1] != N_CLASSES:
        raise ShapeError(f"classifier must have {N_CLASSES} outputs, has {logits.shape[1]}")
    loss, probs, dlogits = softmax_cross_entropy(logits, labels)
    dx, dw, db = dense_backward(dlogits, x, weights)
    return loss, probs, {"input": dx, "weight": dw, "bias": db, "logits": dlogits}


# -- initialisation -------------------------------------------------------


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def fan_in_uniform(rng, shape, fan_in, dtype=np.float32):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); keeps fresh logits near zero."""
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
