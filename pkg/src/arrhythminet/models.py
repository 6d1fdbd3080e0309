"""ArrhythmiNet V1/V2 layer graphs and their parameter/MAC cost model.

V1 stacks five blocks of ``standard conv -> BN -> ReLU -> depthwise ->
pointwise -> BN -> ReLU``. V2 is a stem convolution followed by seven
inverted-bottleneck blocks (pointwise expansion, depthwise filtering,
linear pointwise projection) with identity skips wherever input and output
shapes agree.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError
from .nn import functional as F
from .nn.layers import BatchNorm1d, Conv1d, Dense, GlobalAvgPool, ReLU, Residual, Sequential, walk

INPUT_LENGTH = 360
N_CLASSES = 5
VARIANTS = ("v1", "v2")

# Tuned against the size budgets (302.18 KB and 157.76 KB) and the final
# feature-map shapes (10, 120) for V1 and <= 4 channels, length 160-200 for V2.
DEFAULT_CONFIGS = {
    "v1": {
        "channel_plan": [32, 64, 96, 83, 10],
        "strides": [1, 3, 1, 1, 1],
        "kernel_size": 3,
    },
    "v2": {
        "stem_channels": 16,
        "channel_plan": [16, 16, 32, 32, 32, 12, 3],
        "strides": [2, 1, 1, 1, 1, 1, 1],
        "kernel_size": 3,
        "expansion": 4,
    },
}


@dataclass(frozen=True)
class BlockSpec:
    kind: str  # "separable" (V1), "stem" or "bottleneck" (V2)
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    expansion: int = 1
    skip: bool = False

    @property
    def hidden_channels(self):
        return self.in_channels * self.expansion if self.kind == "bottleneck" else self.out_channels


@dataclass
class ModelSpec:
    variant: str
    blocks: tuple
    input_length: int = INPUT_LENGTH
    n_classes: int = N_CLASSES

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_length": self.input_length,
            "n_classes": self.n_classes,
            "blocks": [asdict(b) for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            variant=d["variant"],
            blocks=tuple(BlockSpec(**b) for b in d["blocks"]),
            input_length=d["input_length"],
            n_classes=d["n_classes"],
        )

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def spec_hash(self):
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @property
    def channel_plan(self):
        return [b.out_channels for b in self.blocks if b.kind != "stem"]

    @property
    def n_blocks(self):
        return sum(b.kind != "stem" for b in self.blocks)

    def block_lengths(self):
        """Temporal length after each block."""
        lengths, length = [], self.input_length
        for b in self.blocks:
            length = F.conv_output_length(length, b.kernel_size, b.stride, (b.kernel_size - 1) // 2)
            lengths.append(length)
        return lengths

    @property
    def feature_shape(self):
        return self.blocks[-1].out_channels, self.block_lengths()[-1]


def _resolve_config(variant, config):
    variant = str(variant).lower()
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    merged = dict(DEFAULT_CONFIGS[variant])
    merged.update({k: v for k, v in (config or {}).items() if v is not None})
    plan = list(merged["channel_plan"])
    strides = list(merged.get("strides") or [1] * len(plan))
    if len(strides) != len(plan):
        raise ConfigError(f"{len(strides)} strides given for {len(plan)} blocks")
    merged["channel_plan"], merged["strides"] = plan, strides
    return variant, merged


def make_spec(variant="v1", config=None):
    """Build a :class:`ModelSpec` and check the final feature-map constraints."""
    variant, cfg = _resolve_config(variant, config)
    k, plan, strides = cfg["kernel_size"], cfg["channel_plan"], cfg["strides"]
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel_size must be a positive odd integer, got {k}")
    blocks = []
    if variant == "v1":
        if len(plan) != 5:
            raise ConfigError(f"V1 has exactly 5 blocks, channel plan has {len(plan)}")
        c_in = 1
        for c, s in zip(plan, strides):
            blocks.append(BlockSpec("separable", c_in, c, k, s))
            c_in = c
    else:
        if len(plan) != 7:
            raise ConfigError(f"V2 has exactly 7 bottleneck blocks, channel plan has {len(plan)}")
        e = cfg["expansion"]
        c_in = cfg["stem_channels"]
        blocks.append(BlockSpec("stem", 1, c_in, k, 1))
        for c, s in zip(plan, strides):
            blocks.append(BlockSpec("bottleneck", c_in, c, k, s, e, skip=(s == 1 and c == c_in)))
            c_in = c

    spec = ModelSpec(variant=variant, blocks=tuple(blocks))
    channels, length = spec.feature_shape
    if variant == "v1" and (channels, length) != (10, 120):
        raise ConfigError(
            f"V1 must end in a (10, 120) feature map, this plan gives ({channels}, {length})"
        )
    if variant == "v2":
        if channels > 4 or not 160 <= length <= 200:
            raise ConfigError(
                f"V2 must end with <= 4 channels and length in [160, 200], "
                f"this plan gives ({channels}, {length})"
            )
        if not any(b.skip for b in blocks):
            raise ConfigError("V2 plan must contain at least one identity skip connection")
    return spec


def _block_layers(b, rng, dtype):
    pad = (b.kernel_size - 1) // 2
    kw = dict(rng=rng, dtype=dtype)
    if b.kind == "separable":
        return Sequential(
            Conv1d(b.in_channels, b.out_channels, b.kernel_size, 1, pad, "standard", **kw),
            BatchNorm1d(b.out_channels, dtype=dtype),
            ReLU(),
            Conv1d(b.out_channels, b.out_channels, b.kernel_size, b.stride, pad, "depthwise", **kw),
            Conv1d(b.out_channels, b.out_channels, 1, 1, 0, "pointwise", **kw),
            BatchNorm1d(b.out_channels, dtype=dtype),
            ReLU(),
            names=["conv", "bn1", "relu1", "dw", "pw", "bn2", "relu2"],
        )
    if b.kind == "stem":
        return Sequential(
            Conv1d(b.in_channels, b.out_channels, b.kernel_size, b.stride, pad, "standard", **kw),
            BatchNorm1d(b.out_channels, dtype=dtype),
            ReLU(),
            names=["conv", "bn", "relu"],
        )
    h = b.hidden_channels
    body = Sequential(
        Conv1d(b.in_channels, h, 1, 1, 0, "pointwise", **kw),
        BatchNorm1d(h, dtype=dtype),
        ReLU(),
        Conv1d(h, h, b.kernel_size, b.stride, pad, "depthwise", **kw),
        BatchNorm1d(h, dtype=dtype),
        ReLU(),
        Conv1d(h, b.out_channels, 1, 1, 0, "pointwise", **kw),
        BatchNorm1d(b.out_channels, dtype=dtype),
        names=["expand", "bn1", "relu1", "dw", "bn2", "relu2", "project", "bn3"],
    )
    return Residual(body) if b.skip else body


class ArrhythmiNet:
    """A built network: feature extractor, global average pool and dense head."""

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        blocks = [_block_layers(b, rng, self.dtype) for b in spec.blocks]
        start = 0 if spec.blocks[0].kind == "stem" else 1
        names = ["stem" if b.kind == "stem" else f"block{i}" for i, b in enumerate(spec.blocks, start=start)]
        self.features = Sequential(*blocks, names=names)
        self.pool = GlobalAvgPool()
        self.head = Dense(spec.blocks[-1].out_channels, spec.n_classes, rng=rng, dtype=self.dtype)
        self.feature_maps = None

    # -- parameter access ------------------------------------------------

    def _leaves(self):
        yield from walk(self.features, "features")
        yield "head", self.head

    def named_parameters(self):
        return [(f"{prefix}.{k}", v) for prefix, layer in self._leaves() for k, v in layer.parameters().items()]

    def named_buffers(self):
        return [(f"{prefix}.{k}", v) for prefix, layer in self._leaves() for k, v in layer.buffers().items()]

    def state(self):
        """Parameters then buffers, each in declaration order."""
        return self.named_parameters() + self.named_buffers()

    def parameters(self):
        return dict(self.named_parameters())

    def gradients(self):
        return {f"{prefix}.{k}": g for prefix, layer in self._leaves() for k, g in layer.grads.items()}

    def residual_blocks(self):
        return [layer for _, layer in self.features.children() if isinstance(layer, Residual)]

    def set_skip_connections(self, enabled):
        for block in self.residual_blocks():
            block.enabled = enabled

    # -- computation ----------------------------------------------------

    def extract_features(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        self.feature_maps = self.features.forward(x, training)
        return self.feature_maps

    def head_forward(self, feature_maps, training=False):
        return self.head.forward(self.pool.forward(feature_maps, training), training)

    def head_backward(self, dlogits):
        """Gradient of the logits w.r.t. the final feature maps."""
        return self.pool.backward(self.head.backward(dlogits))

    def forward(self, x, training=False):
        """Return pre-softmax logits ``(N, n_classes)``."""
        return self.head_forward(self.extract_features(x, training), training)

    def backward(self, dlogits):
        return self.features.backward(self.head_backward(dlogits))

    def predict_proba(self, beats, batch_size=512):
        beats = check_beats(beats, self.spec.input_length)
        out = []
        for i in range(0, len(beats), batch_size):
            out.append(F.softmax(self.forward(beats[i : i + batch_size], training=False).astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, self.spec.n_classes))

    def __repr__(self):
        return f"ArrhythmiNet({self.spec.variant}, plan={self.spec.channel_plan}, hash={self.spec.spec_hash[:12]})"


def check_beats(beats, length=INPUT_LENGTH):
    """Coerce ``(n, length)`` or ``(n, 1, length)`` input to a rank-3 array."""
    arr = np.asarray(beats.data if hasattr(beats, "grad") else beats)
    if arr.ndim == 1:
        arr = arr[None, None, :]
    elif arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3 or arr.shape[1] != 1:
        raise ShapeError(f"beats must be shaped (n, 1, {length}), got {arr.shape}")
    if arr.shape[2] != length:
        raise ShapeError(f"wrong beat length: expected {length} samples, got {arr.shape[2]}")
    return arr


def build(variant="v1", config=None, seed=0, dtype=np.float32):
    """Return ``(spec, model)`` for a variant with He-uniform initialised weights."""
    spec = make_spec(variant, config)
    return spec, ArrhythmiNet(spec, seed=seed, dtype=dtype)


def predict(model, beats):
    """Class probabilities ``(n, 5)`` using BatchNorm running statistics."""
    return model.predict_proba(beats)


# -- cost model --------------------------------------------------------


@dataclass
class LayerCost:
    name: str
    mode: str
    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int
    length_in: int
    length_out: int
    weights: int
    biases: int
    bn_learnable: int = 0
    bn_running: int = 0
    macs: int = 0

    @property
    def params(self):
        return self.weights + self.biases + self.bn_learnable


@dataclass
class CostReport:
    variant: str
    input_length: int
    layers: list = field(default_factory=list)
    separable_pairs: list = field(default_factory=list)  # (depthwise LayerCost, pointwise LayerCost)

    @property
    def total_weights(self):
        return sum(l.weights for l in self.layers)

    @property
    def total_biases(self):
        return sum(l.biases for l in self.layers)

    @property
    def total_bn_learnable(self):
        return sum(l.bn_learnable for l in self.layers)

    @property
    def total_bn_running(self):
        return sum(l.bn_running for l in self.layers)

    @property
    def total_params(self):
        """Trainable parameters: weights, biases and BatchNorm gamma/beta."""
        return self.total_weights + self.total_biases + self.total_bn_learnable

    @property
    def total_stored(self):
        return self.total_params + self.total_bn_running

    @property
    def total_macs(self):
        return sum(l.macs for l in self.layers)

    def weight_kb(self):
        return self.total_stored * 4 / 1024

    def to_dict(self):
        return {
            "variant": self.variant,
            "input_length": self.input_length,
            "layers": [dict(asdict(l), params=l.params) for l in self.layers],
            "totals": {
                "weights": self.total_weights,
                "biases": self.total_biases,
                "bn_learnable": self.total_bn_learnable,
                "bn_running": self.total_bn_running,
                "params": self.total_params,
                "stored_floats": self.total_stored,
                "macs": self.total_macs,
                "weight_kb": round(self.weight_kb(), 2),
            },
        }

    def format_table(self):
        lines = [f"ArrhythmiNet {self.variant.upper()} cost report (input length {self.input_length})",
                 f"{'layer':<28}{'mode':<11}{'k':>3}{'C_in':>6}{'C_out':>6}{'L_out':>6}"
                 f"{'weights':>9}{'bias':>6}{'BN':>6}{'MACs':>11}"]
        for l in self.layers:
            lines.append(f"{l.name:<28}{l.mode:<11}{l.kernel_size:>3}{l.in_channels:>6}{l.out_channels:>6}"
                         f"{l.length_out:>6}{l.weights:>9}{l.biases:>6}{l.bn_learnable + l.bn_running:>6}{l.macs:>11}")
        lines.append(f"total params {self.total_params} (weights {self.total_weights}, biases {self.total_biases}, "
                     f"BN learnable {self.total_bn_learnable}); BN running stats {self.total_bn_running}")
        lines.append(f"total MACs {self.total_macs}; weight storage {self.weight_kb():.2f} KB")
        return "\n".join(lines)


def conv_params(mode, kernel_size, in_channels, out_channels, bias=False):
    """Parameter count of one convolution per the standard/depthwise/pointwise formulas."""
    if mode == "standard":
        n = kernel_size * in_channels * out_channels
    elif mode == "depthwise":
        n, out_channels = kernel_size * in_channels, in_channels
    elif mode == "pointwise":
        n = in_channels * out_channels
    else:
        raise ConfigError(f"unknown convolution mode {mode!r}")
    return n + (out_channels if bias else 0)


def conv_macs(mode, length_out, kernel_size, in_channels, out_channels):
    if mode == "standard":
        return length_out * out_channels * kernel_size * in_channels
    if mode == "depthwise":
        return length_out * in_channels * kernel_size
    if mode == "pointwise":
        return length_out * in_channels * out_channels
    raise ConfigError(f"unknown convolution mode {mode!r}")


def _spec_layers(spec):
    """Yield ``(name, kind, details)`` leaf descriptors in model declaration order."""
    for i, b in enumerate(spec.blocks):
        if b.kind == "stem":
            prefix = "features.stem"
        else:
            idx = i if spec.blocks[0].kind == "stem" else i + 1
            prefix = f"features.block{idx}" + (".body" if b.skip else "")
        if b.kind == "separable":
            yield f"{prefix}.conv", "standard", (b.kernel_size, b.in_channels, b.out_channels, 1)
            yield f"{prefix}.bn1", "bn", b.out_channels
            yield f"{prefix}.dw", "depthwise", (b.kernel_size, b.out_channels, b.out_channels, b.stride)
            yield f"{prefix}.pw", "pointwise", (1, b.out_channels, b.out_channels, 1)
            yield f"{prefix}.bn2", "bn", b.out_channels
        elif b.kind == "stem":
            yield f"{prefix}.conv", "standard", (b.kernel_size, b.in_channels, b.out_channels, b.stride)
            yield f"{prefix}.bn", "bn", b.out_channels
        else:
            h = b.hidden_channels
            yield f"{prefix}.expand", "pointwise", (1, b.in_channels, h, 1)
            yield f"{prefix}.bn1", "bn", h
            yield f"{prefix}.dw", "depthwise", (b.kernel_size, h, h, b.stride)
            yield f"{prefix}.bn2", "bn", h
            yield f"{prefix}.project", "pointwise", (1, h, b.out_channels, 1)
            yield f"{prefix}.bn3", "bn", b.out_channels


def cost_report(spec, input_length=None, bias=True, batchnorm=True):
    """Itemised parameter and MAC counts.

    ``bias`` and ``batchnorm`` only toggle whether those entries are counted,
    so ``cost_report(spec, bias=False, batchnorm=False)`` exposes the
    bias-free weight counts of the separable identity.
    """
    length = spec.input_length if input_length is None else input_length
    report = CostReport(spec.variant, length)
    last_dw = None
    for name, kind, d in _spec_layers(spec):
        if kind == "bn":
            report.layers.append(LayerCost(
                name, "batchnorm", 0, d, d, 1, length, length, 0, 0,
                bn_learnable=2 * d if batchnorm else 0, bn_running=2 * d if batchnorm else 0,
            ))
            continue
        k, c_in, c_out, stride = d
        l_out = F.conv_output_length(length, k, stride, (k - 1) // 2)
        out_c = c_in if kind == "depthwise" else c_out
        entry = LayerCost(
            name, kind, k, c_in, out_c, stride, length, l_out,
            weights=conv_params(kind, k, c_in, c_out),
            biases=out_c if bias else 0,
            macs=conv_macs(kind, l_out, k, c_in, c_out),
        )
        report.layers.append(entry)
        if kind == "depthwise":
            last_dw = entry
        elif kind == "pointwise" and last_dw is not None and last_dw.out_channels == c_in:
            report.separable_pairs.append((last_dw, entry))
            last_dw = None
        length = l_out
    c = spec.blocks[-1].out_channels
    report.layers.append(LayerCost("head", "dense", 1, c, spec.n_classes, 1, 1, 1,
                                   weights=c * spec.n_classes, biases=spec.n_classes if bias else 0,
                                   macs=c * spec.n_classes))
    return report


def count_params(spec, bias=True, batchnorm=True):
    return cost_report(spec, bias=bias, batchnorm=batchnorm)


def count_macs(spec, input_length=INPUT_LENGTH):
    return cost_report(spec, input_length=input_length)
