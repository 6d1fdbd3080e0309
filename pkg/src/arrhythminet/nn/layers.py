"""Stateful layers that cache what their backward pass needs.

Each layer works on raw ``(N, C, L)`` arrays, exposes its trainable arrays
through :meth:`Layer.parameters` and fills :attr:`Layer.grads` on
:meth:`Layer.backward`. Parameter and buffer order is the declaration order
and is what model files store.
"""

import numpy as np

from ..exceptions import ConfigError
from . import functional as F


class Layer:
    def __init__(self):
        self.grads = {}
        self._cache = None

    def parameters(self):
        return {}

    def buffers(self):
        return {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def zero_grad(self):
        self.grads = {}

    def children(self):
        return []

    def __call__(self, x, training=False):
        return self.forward(x, training)


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=None,
                 mode="standard", bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if mode == "pointwise":
            kernel_size = 1
        if mode == "depthwise" and out_channels != in_channels:
            raise ConfigError("depthwise convolution keeps the channel count")
        if padding is None:
            padding = (kernel_size - 1) // 2
        rng = np.random.default_rng() if rng is None else rng
        if mode == "depthwise":
            shape, fan_in = (in_channels, 1, kernel_size), kernel_size
        else:
            shape, fan_in = (out_channels, in_channels, kernel_size), in_channels * kernel_size
        weight = F.he_uniform(rng, shape, fan_in, dtype)
        self.params = F.ConvParams(
            weight=weight,
            bias=np.zeros(out_channels, dtype=dtype) if bias else None,
            stride=stride,
            padding=padding,
            mode=mode,
        )

    @property
    def mode(self):
        return self.params.mode

    def parameters(self):
        p = {"weight": self.params.weight}
        if self.params.bias is not None:
            p["bias"] = self.params.bias
        return p

    def forward(self, x, training=False):
        self._cache = x
        return F.conv1d_forward(x, self.params).data

    def backward(self, grad):
        dx, dw, db = F.conv1d_backward(grad, self._cache, self.params)
        self.grads = {"weight": dw}
        if db is not None:
            self.grads["bias"] = db
        return dx

    def __repr__(self):
        p = self.params
        return (f"Conv1d({p.mode}, {p.in_channels}->{p.out_channels}, k={p.kernel_size}, "
                f"stride={p.stride}, padding={p.padding})")


class BatchNorm1d(Layer):
    def __init__(self, channels, epsilon=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.params = F.BatchNormParams.identity(channels, dtype=dtype, epsilon=epsilon, momentum=momentum)

    def parameters(self):
        return {"gamma": self.params.gamma, "beta": self.params.beta}

    def buffers(self):
        return {"running_mean": self.params.running_mean, "running_var": self.params.running_var}

    def forward(self, x, training=False):
        out, self._cache = F.batchnorm1d_forward(x, self.params, training)
        return out

    def backward(self, grad):
        dx, dgamma, dbeta = F.batchnorm1d_backward(grad, self._cache, self.params)
        self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx

    def __repr__(self):
        return f"BatchNorm1d({self.params.channels})"


class ReLU(Layer):
    def forward(self, x, training=False):
        self._cache = x
        return np.maximum(x, 0)

    def backward(self, grad):
        return F.relu_backward(grad, self._cache)

    def __repr__(self):
        return "ReLU()"


class GlobalAvgPool(Layer):
    def forward(self, x, training=False):
        self._cache = x.shape[2]
        return F.global_avg_pool(x).data

    def backward(self, grad):
        return F.global_avg_pool_backward(grad, self._cache)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.params = F.DenseParams(
            weight=F.fan_in_uniform(rng, (out_features, in_features), in_features, dtype),
            bias=np.zeros(out_features, dtype=dtype),
        )

    def parameters(self):
        return {"weight": self.params.weight, "bias": self.params.bias}

    def forward(self, x, training=False):
        self._cache = x
        return F.dense_forward(x, self.params)

    def backward(self, grad):
        dx, dw, db = F.dense_backward(grad, self._cache, self.params)
        self.grads = {"weight": dw, "bias": db}
        return dx


class Sequential(Layer):
    def __init__(self, *layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names is not None else [str(i) for i in range(len(layers))]

    def children(self):
        return list(zip(self.names, self.layers))

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class Residual(Layer):
    """``body(x) + x``; the skip can be switched off for ablations."""

    def __init__(self, body, enabled=True):
        super().__init__()
        self.body = body
        self.enabled = enabled

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training=False):
        out = self.body.forward(x, training)
        if self.enabled:
            out = out + x
        return out

    def backward(self, grad):
        dx = self.body.backward(grad)
        if self.enabled:
            dx = dx + grad
        return dx


def walk(layer, prefix=""):
    """Yield ``(qualified_name, layer)`` for every leaf layer in order."""
    kids = layer.children()
    if not kids:
        yield prefix, layer
        return
    for name, child in kids:
        yield from walk(child, f"{prefix}.{name}" if prefix else name)
