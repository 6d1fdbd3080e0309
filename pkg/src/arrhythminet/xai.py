"""Grad-CAM heatmaps and Shapley attributions for single beats."""

import csv
import json
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError
from .models import check_beats
from .nn import functional as F

MAX_EXACT_SEGMENTS = 12
METHODS = ("gradcam", "shap-exact", "shap-sampled")
EXPORT_FORMATS = ("csv", "json", "svg")


@dataclass
class Attribution:
    target: int
    method: str
    scores: np.ndarray  # one value per beat sample
    segments: list = None  # [start, stop) boundaries for segment methods
    segment_scores: np.ndarray = None
    baseline: str = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown attribution method {self.method!r}")
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.segment_scores is not None:
            self.segment_scores = np.asarray(self.segment_scores, dtype=np.float64)

    def to_dict(self):
        return {
            "target": int(self.target),
            "method": self.method,
            "scores": self.scores.tolist(),
            "segments": [list(map(int, s)) for s in self.segments] if self.segments is not None else None,
            "segment_scores": self.segment_scores.tolist() if self.segment_scores is not None else None,
            "baseline": self.baseline,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        segs = d.get("segments")
        return cls(
            target=d["target"],
            method=d["method"],
            scores=np.array(d["scores"], dtype=np.float64),
            segments=[tuple(s) for s in segs] if segs is not None else None,
            segment_scores=np.array(d["segment_scores"]) if d.get("segment_scores") is not None else None,
            baseline=d.get("baseline"),
            meta=d.get("meta", {}),
        )

    def __eq__(self, other):
        if not isinstance(other, Attribution):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _check_class(c, n_classes):
    if not 0 <= int(c) < n_classes:
        raise ConfigError(f"class index {c} out of range [0, {n_classes})")
    return int(c)


# -- Grad-CAM ----------------------------------------------------------------


def upsample(values, length):
    """Linear interpolation of a length-L map onto ``length`` samples, aligned by cell centres."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == length:
        return values.copy()
    centres = (np.arange(n) + 0.5) * length / n - 0.5
    return np.interp(np.arange(length), centres, values)


def minmax(x):
    """Scale to [0, 1]; an all-zero (or constant) map stays at zero."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def gradcam_from_maps(feature_maps, gradients, length=None, normalize=True):
    """Grad-CAM from ``(K, L)`` feature maps and the gradient of the class score w.r.t. them.

    Channel weights are the temporal mean of the gradient; the map is the
    ReLU of their weighted sum, optionally upsampled and min-max scaled.
    """
    a = np.asarray(feature_maps, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.ndim != 2 or a.shape != g.shape:
        raise ConfigError(f"feature maps {a.shape} and gradients {g.shape} must both be (K, L)")
    alpha = g.mean(axis=1)
    cam = np.maximum(alpha @ a, 0.0)
    if length is not None:
        cam = np.maximum(upsample(cam, length), 0.0)
    return minmax(cam) if normalize else cam


def grad_cam(model, beat, target):
    """Grad-CAM over the model's final feature maps for one beat, using the pre-softmax logit."""
    x = check_beats(beat, model.spec.input_length)
    if len(x) != 1:
        raise ConfigError("grad_cam explains one beat at a time")
    c = _check_class(target, model.spec.n_classes)
    maps = model.extract_features(x, training=False)
    model.head_forward(maps, training=False)
    onehot = np.zeros((1, model.spec.n_classes), dtype=model.dtype)
    onehot[0, c] = 1.0
    grads = model.head_backward(onehot)
    raw = gradcam_from_maps(maps[0], grads[0], normalize=False)
    scores = gradcam_from_maps(maps[0], grads[0], length=model.spec.input_length)
    return Attribution(c, "gradcam", scores, meta={"feature_length": int(maps.shape[2]),
                                                  "raw_map": raw.tolist()})


# -- Shapley values -----------------------------------------------------------


def all_coalitions(m):
    """``(2**m, m)`` boolean matrix; row ``b`` holds the bits of ``b`` (player i = bit i)."""
    masks = np.arange(2 ** m)[:, None]
    return ((masks >> np.arange(m)[None, :]) & 1).astype(bool)


def set_game(f):
    """Adapt ``f(frozenset) -> float`` to the batched ``(k, m) bool -> (k,)`` form."""
    def value(coalitions):
        return np.array([f(frozenset(np.flatnonzero(row).tolist())) for row in coalitions], dtype=np.float64)
    return value


def shapley_from_table(values, m):
    """Exact Shapley values from a table of all ``2**m`` coalition values (index = bitmask)."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (2 ** m,):
        raise ConfigError(f"need {2 ** m} coalition values for {m} players")
    weights = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    sizes = np.array([bin(b).count("1") for b in range(2 ** m)])
    phi = np.empty(m)
    for i in range(m):
        bit = 1 << i
        without = np.array([b for b in range(2 ** m) if not b & bit], dtype=np.int64)
        # fsum keeps the result independent of summation order
        phi[i] = math.fsum(weights[s] * d for s, d in zip(sizes[without], v[without | bit] - v[without]))
    return phi


def shapley_exact(value, m):
    """Exact Shapley values by enumerating all coalitions.

    ``value`` maps a ``(k, m)`` boolean coalition matrix to ``k`` values.
    """
    if m < 1:
        raise ConfigError("need at least one player")
    if m > MAX_EXACT_SEGMENTS:
        raise ConfigError(
            f"exact Shapley enumeration is limited to {MAX_EXACT_SEGMENTS} segments (got {m}); "
            "use the sampled mode for finer segmentations"
        )
    return shapley_from_table(value(all_coalitions(m)), m)


def shapley_sampled(value, m, draws=1000, seed=0, permutations=None):
    """Permutation-sampling Shapley estimate.

    Coalition values are cached, so repeated coalitions cost one evaluation.
    Passing ``permutations`` replaces the random draws with the given orderings.
    """
    if permutations is None:
        if draws < 1:
            raise ConfigError("draws must be >= 1")
        rng = np.random.default_rng(seed)
        perms = (rng.permutation(m) for _ in range(draws))
    else:
        perms = (np.asarray(p) for p in permutations)
    cache = {}
    contributions = [[] for _ in range(m)]
    count = 0
    for perm in perms:
        chain = np.zeros((m + 1, m), dtype=bool)
        for k, player in enumerate(perm, 1):
            chain[k] = chain[k - 1]
            chain[k, player] = True
        keys = [row.tobytes() for row in chain]
        missing = [i for i, key in enumerate(keys) if key not in cache]
        if missing:
            for i, val in zip(missing, value(chain[missing])):
                cache[keys[i]] = float(val)
        vals = [cache[key] for key in keys]
        for k, player in enumerate(perm):
            contributions[player].append(vals[k + 1] - vals[k])
        count += 1
    if count == 0:
        raise ConfigError("no permutations given")
    return np.array([math.fsum(c) / count for c in contributions]), {"draws": count, "evaluations": len(cache)}


def segment_bounds(length, m):
    """``m`` contiguous segments covering ``range(length)``, sizes differing by at most one."""
    if not 1 <= m <= length:
        raise ConfigError(f"segments must be in [1, {length}], got {m}")
    edges = np.linspace(0, length, m + 1).round().astype(int)
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def resolve_baseline(baseline, length, mean_beat=None):
    """Return ``(array, descriptor)`` for 'zeros', 'mean' or an explicit beat."""
    if isinstance(baseline, str):
        if baseline == "zeros":
            return np.zeros(length), "zeros"
        if baseline == "mean":
            if mean_beat is None:
                raise ConfigError("baseline 'mean' needs the training-set mean beat")
            return np.asarray(mean_beat, dtype=np.float64).reshape(length), "mean"
        raise ConfigError(f"baseline must be 'zeros', 'mean' or an array, got {baseline!r}")
    arr = np.asarray(baseline, dtype=np.float64).reshape(-1)
    if arr.shape != (length,):
        raise ConfigError(f"baseline beat must have {length} samples")
    return arr, "custom"


def masked_value_fn(model, beat, target, bounds, baseline, batch_size=1024):
    """Coalition value = class probability with absent segments taken from ``baseline``."""
    beat = np.asarray(beat, dtype=np.float64).reshape(-1)
    seg_of = np.empty(len(beat), dtype=np.int64)
    for i, (a, b) in enumerate(bounds):
        seg_of[a:b] = i

    def value(coalitions):
        keep = np.asarray(coalitions, dtype=bool)[:, seg_of]
        x = np.where(keep, beat[None, :], baseline[None, :])
        return model.predict_proba(x, batch_size=batch_size)[:, target]

    return value


def _segment_attribution(method, phi, bounds, length, target, descriptor, meta):
    scores = np.empty(length)
    for p, (a, b) in zip(phi, bounds):
        scores[a:b] = p
    return Attribution(target, method, scores, segments=bounds, segment_scores=phi, baseline=descriptor, meta=meta)


def shap_exact(model, beat, target, segments=12, baseline="mean", mean_beat=None):
    """Exact segment-level Shapley values of the class-``target`` probability.

    Per-sample ``scores`` repeat each segment's value across its samples.
    """
    x = check_beats(beat, model.spec.input_length)[0, 0]
    c = _check_class(target, model.spec.n_classes)
    if segments > MAX_EXACT_SEGMENTS:
        raise ConfigError(
            f"exact mode supports at most {MAX_EXACT_SEGMENTS} segments (got {segments}); "
            "use shap-sampled with --draws for finer segmentations"
        )
    bounds = segment_bounds(len(x), segments)
    base, desc = resolve_baseline(baseline, len(x), mean_beat)
    value = masked_value_fn(model, x, c, bounds, base)
    table = value(all_coalitions(segments))
    phi = shapley_from_table(table, segments)
    meta = {"f_full": float(table[-1]), "f_empty": float(table[0]), "segments": segments}
    return _segment_attribution("shap-exact", phi, bounds, len(x), c, desc, meta)


def shap_sampled(model, beat, target, segments=12, draws=1000, seed=0, baseline="mean", mean_beat=None):
    """Permutation-sampling estimate of :func:`shap_exact`; any segment count up to the beat length."""
    x = check_beats(beat, model.spec.input_length)[0, 0]
    c = _check_class(target, model.spec.n_classes)
    bounds = segment_bounds(len(x), segments)
    base, desc = resolve_baseline(baseline, len(x), mean_beat)
    value = masked_value_fn(model, x, c, bounds, base)
    phi, info = shapley_sampled(value, segments, draws, seed)
    meta = {"segments": segments, "seed": seed, "estimate": True, **info}
    return _segment_attribution("shap-sampled", phi, bounds, len(x), c, desc, meta)


# -- export ------------------------------------------------------------------


def _score_colour(v):
    """Blue (negative) through white to red (positive) for v in [-1, 1]."""
    v = float(np.clip(v, -1, 1))
    if v >= 0:
        return f"rgb(255,{round(255 * (1 - v))},{round(255 * (1 - v))})"
    return f"rgb({round(255 * (1 + v))},{round(255 * (1 + v))},255)"


def to_svg(attribution, beat, width=720, height=240):
    beat = np.asarray(beat, dtype=np.float64).reshape(-1)
    n = len(beat)
    scale = np.max(np.abs(attribution.scores)) or 1.0
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "title").text = f"{attribution.method} attribution, class {attribution.target}"
    band = ET.SubElement(svg, "g", id="attribution")
    dx = width / n
    for t, s in enumerate(attribution.scores):
        ET.SubElement(band, "rect", x=f"{t * dx:.3f}", y="0", width=f"{dx + 0.05:.3f}", height=str(height),
                      fill=_score_colour(s / scale))
    lo, hi = beat.min(), beat.max()
    span = (hi - lo) or 1.0
    pad = 0.1 * height
    pts = " ".join(f"{(t + 0.5) * dx:.3f},{pad + (hi - v) / span * (height - 2 * pad):.3f}" for t, v in enumerate(beat))
    ET.SubElement(svg, "polyline", id="beat", points=pts, fill="none", stroke="black")
    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode", xml_declaration=True) + "\n"


def export_attribution(attribution, beat, fmt, path):
    """Write an attribution as csv (t, beat, score), json or an SVG overlay."""
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(f"export format must be one of {EXPORT_FORMATS}, got {fmt!r}")
    beat = np.asarray(beat, dtype=np.float64).reshape(-1)
    if len(beat) != len(attribution.scores):
        raise ConfigError("beat and attribution lengths differ")
    parent = os.path.dirname(os.fspath(path)) or "."
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise DataError(f"cannot write attribution to {path}: directory is not writable")
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t", "beat", "score"])
            for t, (b, s) in enumerate(zip(beat, attribution.scores)):
                w.writerow([t, repr(float(b)), repr(float(s))])
    elif fmt == "json":
        with open(path, "w") as f:
            json.dump({"attribution": attribution.to_dict(), "beat": beat.tolist()}, f, sort_keys=True)
            f.write("\n")
    else:
        with open(path, "w") as f:
            f.write(to_svg(attribution, beat))
    return path


def load_attribution(path):
    with open(path) as f:
        doc = json.load(f)
    return Attribution.from_dict(doc["attribution"]), np.array(doc["beat"])


def softmax_probability(model, beat, target):
    """Convenience: class probability for one beat."""
    x = check_beats(beat, model.spec.input_length)
    return float(F.softmax(model.forward(x).astype(np.float64))[0, target])
