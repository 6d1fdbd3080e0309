"""Slow reference implementations used only by the tests.

Nothing here imports the engine's kernels, so every check is independent of
the vectorised code path it verifies.
"""

import itertools
from math import factorial

import numpy as np


class MacCounter:
    def __init__(self):
        self.count = 0


def conv1d_nested(x, w, b, stride, padding, mode, counter=None):
    """Direct-summation 1D convolution over explicit loops.

    ``w`` layout follows the engine: standard ``(Co, Ci, k)``,
    depthwise ``(C, 1, k)``, pointwise ``(Co, Ci, 1)``.
    """
    n, c_in, length = x.shape
    k = w.shape[2]
    l_out = (length + 2 * padding - k) // stride + 1
    c_out = w.shape[0]
    out = np.zeros((n, c_out, l_out), dtype=np.float64)
    for bi in range(n):
        for o in range(c_out):
            for t in range(l_out):
                acc = 0.0
                in_chans = [o] if mode == "depthwise" else range(c_in)
                for ci in in_chans:
                    wi = 0 if mode == "depthwise" else ci
                    for j in range(k):
                        pos = t * stride + j - padding
                        if counter is not None:
                            counter.count += 1
                        if 0 <= pos < length:
                            acc += x[bi, ci, pos] * w[o, wi, j]
                out[bi, o, t] = acc + (b[o] if b is not None else 0.0)
    return out


def numerical_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` w.r.t. array ``x`` (mutated and restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def shapley_by_orderings(value, m):
    """Average marginal contribution over all m! orderings (``value`` takes a frozenset)."""
    phi = np.zeros(m)
    for order in itertools.permutations(range(m)):
        coalition = set()
        for player in order:
            before = value(frozenset(coalition))
            coalition.add(player)
            phi[player] += value(frozenset(coalition)) - before
    return phi / factorial(m)


def encode_212_loops(samples):
    """Byte-at-a-time format-212 packer; ``samples`` is a flat interleaved int sequence."""
    out = bytearray()
    vals = [int(s) & 0xFFF for s in samples]
    n_bytes = (3 * len(vals) + 1) // 2
    if len(vals) % 2:
        vals.append(0)
    for i in range(0, len(vals), 2):
        s1, s2 = vals[i], vals[i + 1]
        out.append(s1 & 0xFF)
        out.append(((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0))
        out.append(s2 & 0xFF)
    return bytes(out[:n_bytes])


def conv1d_counted(x, w, b, stride, padding, mode, counter):
    """Convolution looping over (output channel, input channel, tap).

    Each loop iteration multiplies one weight against the L' input samples
    it touches and adds L' to ``counter``; padded positions count, as they
    do in the L' x C_out x k x C_in formula.
    """
    n, c_in, length = x.shape
    k = w.shape[2]
    l_out = (length + 2 * padding - k) // stride + 1
    xp = np.zeros((n, c_in, length + 2 * padding))
    xp[:, :, padding : padding + length] = x
    c_out = w.shape[0]
    out = np.zeros((n, c_out, l_out))
    for o in range(c_out):
        for ci in ([o] if mode == "depthwise" else range(c_in)):
            wi = 0 if mode == "depthwise" else ci
            for j in range(k):
                taps = xp[:, ci, j : j + stride * (l_out - 1) + 1 : stride]
                out[:, o, :] += w[o, wi, j] * taps
                counter.count += l_out * n
        if b is not None:
            out[:, o, :] += b[o]
    return out


def model_forward_counted(model, x, counter):
    """Inference forward of an ArrhythmiNet rebuilt from its spec and stored arrays."""
    state = {name: np.asarray(a, dtype=np.float64) for name, a in model.state()}
    spec = model.spec

    def conv(prefix, h, mode, stride, padding):
        return conv1d_counted(h, state[f"{prefix}.weight"], state.get(f"{prefix}.bias"),
                              stride, padding, mode, counter)

    def bn(prefix, h):
        g, be = state[f"{prefix}.gamma"], state[f"{prefix}.beta"]
        mu, var = state[f"{prefix}.running_mean"], state[f"{prefix}.running_var"]
        return g[None, :, None] * (h - mu[None, :, None]) / np.sqrt(var[None, :, None] + 1e-5) + be[None, :, None]

    h = np.asarray(x, dtype=np.float64)
    offset = 0 if spec.blocks[0].kind == "stem" else 1
    for i, blk in enumerate(spec.blocks):
        pad = (blk.kernel_size - 1) // 2
        if blk.kind == "stem":
            h = np.maximum(bn("features.stem.bn", conv("features.stem.conv", h, "standard", blk.stride, pad)), 0)
        elif blk.kind == "separable":
            p = f"features.block{i + offset}"
            h = np.maximum(bn(f"{p}.bn1", conv(f"{p}.conv", h, "standard", 1, pad)), 0)
            h = conv(f"{p}.dw", h, "depthwise", blk.stride, pad)
            h = np.maximum(bn(f"{p}.bn2", conv(f"{p}.pw", h, "pointwise", 1, 0)), 0)
        else:
            p = f"features.block{i + offset}" + (".body" if blk.skip else "")
            z = np.maximum(bn(f"{p}.bn1", conv(f"{p}.expand", h, "pointwise", 1, 0)), 0)
            z = np.maximum(bn(f"{p}.bn2", conv(f"{p}.dw", z, "depthwise", blk.stride, pad)), 0)
            z = bn(f"{p}.bn3", conv(f"{p}.project", z, "pointwise", 1, 0))
            h = z + h if blk.skip else z
    pooled = h.mean(axis=2)
    logits = np.zeros((h.shape[0], spec.n_classes))
    for c in range(spec.n_classes):
        for f in range(pooled.shape[1]):
            logits[:, c] += state["head.weight"][c, f] * pooled[:, f]
            counter.count += h.shape[0]
        logits[:, c] += state["head.bias"][c]
    return logits
