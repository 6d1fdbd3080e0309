from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ConfigError, NumericError


@dataclass
class OptimizerConfig:
    name: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0

    def to_dict(self):
        return asdict(self)


def _check_finite(grads):
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericError(f"non-finite gradient in {', '.join(bad)}; step rejected")


class SGD:
    def __init__(self, learning_rate=0.01, momentum=0.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        """Update ``params`` in place. Both are ``{name: array}`` dicts."""
        _check_finite(grads)
        for name, g in grads.items():
            if self.momentum:
                v = self.velocity.setdefault(name, np.zeros_like(params[name]))
                v *= self.momentum
                v += g
                g = v
            params[name] -= (self.learning_rate * g).astype(params[name].dtype, copy=False)


class Adam:
    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        _check_finite(grads)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            p -= update.astype(p.dtype, copy=False)


def make_optimizer(config):
    if isinstance(config, dict):
        config = OptimizerConfig(**config)
    name = config.name.lower()
    if name == "sgd":
        return SGD(config.learning_rate, config.momentum)
    if name == "adam":
        return Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    raise ConfigError(f"unknown optimizer {config.name!r} (expected 'sgd' or 'adam')")


def optimizer_step(model_params, grads, config, state=None):
    """One stateless-looking step; pass ``state`` (an optimizer) to continue Adam runs.

    Returns the optimizer so callers can thread it through successive steps.
    """
    opt = state if state is not None else make_optimizer(config)
    opt.step(model_params, grads)
    return opt
