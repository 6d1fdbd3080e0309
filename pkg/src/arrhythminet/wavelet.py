"""Periodic Symlet-4 wavelet transform, soft-threshold denoising and beat normalisation."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError

# sym4 decomposition low-pass filter; LO/HI below are the reconstruction pair.
SYM4_DEC_LO = np.array([
    -0.07576571478927333,
    -0.02963552764599851,
    0.49761866763201545,
    0.8037387518059161,
    0.29785779560527736,
    -0.09921954357684722,
    -0.012603967262037833,
    0.0322231006040427,
])
LO = SYM4_DEC_LO[::-1].copy()
HI = np.array([(-1) ** k * LO[len(LO) - 1 - k] for k in range(len(LO))])

DEFAULT_LEVELS = 4
MAD_SCALE = 0.6745


def check_filter_bank(lo=LO, hi=HI, tol=1e-10):
    """Raise if the filter pair is not an orthonormal two-channel bank."""
    problems = []
    if abs(lo.sum() - np.sqrt(2)) > tol:
        problems.append(f"low-pass sum {lo.sum()!r} != sqrt(2)")
    if abs(hi.sum()) > tol:
        problems.append("high-pass sum != 0")
    for shift in range(0, len(lo), 2):
        want = 1.0 if shift == 0 else 0.0
        if abs(np.dot(lo[shift:], lo[: len(lo) - shift]) - want) > tol:
            problems.append(f"low-pass shift-{shift} autocorrelation")
        if abs(np.dot(hi[shift:], hi[: len(hi) - shift]) - want) > tol:
            problems.append(f"high-pass shift-{shift} autocorrelation")
        if abs(np.dot(lo[shift:], hi[: len(hi) - shift])) > tol or abs(np.dot(hi[shift:], lo[: len(lo) - shift])) > tol:
            problems.append(f"shift-{shift} cross-correlation")
    if problems:
        raise RuntimeError("sym4 filter bank failed validation: " + "; ".join(problems))


check_filter_bank()


@dataclass
class WaveletDecomposition:
    approximation: np.ndarray
    details: list  # details[0] is level 1 (finest)
    lengths: list = field(default_factory=list)  # signal length entering each level
    mode: str = "periodic"
    wavelet: str = "sym4"

    @property
    def levels(self):
        return len(self.details)

    def copy(self):
        return WaveletDecomposition(self.approximation.copy(), [d.copy() for d in self.details],
                                    list(self.lengths), self.mode, self.wavelet)

    def scaled(self, a):
        return WaveletDecomposition(a * self.approximation, [a * d for d in self.details],
                                    list(self.lengths), self.mode, self.wavelet)

    def energy(self):
        return float(np.sum(self.approximation ** 2) + sum(np.sum(d ** 2) for d in self.details))


def max_level(length, filter_length=len(LO)):
    if length < filter_length:
        return 0
    return int(np.floor(np.log2(length / (filter_length - 1))))


def _indices(n_even):
    # offset K/2 - 1 aligns coefficients with the usual periodization convention
    half = n_even // 2
    offset = len(LO) // 2 - 1
    return (2 * np.arange(half)[:, None] + np.arange(len(LO))[None, :] - offset) % n_even


def _analysis(x):
    if x.shape[-1] % 2:
        x = np.concatenate([x, x[..., -1:]], axis=-1)
    idx = _indices(x.shape[-1])
    windows = x[..., idx]
    # HI sums to ~1e-12, not 0, at double precision; offsetting each window by
    # its first sample makes constant input give exactly zero detail. Taps are
    # accumulated in a fixed order (BLAS may sum rows differently), so equal
    # windows give bit-identical coefficients at every level.
    centred = windows - windows[..., :1]
    a = np.zeros(windows.shape[:-1])
    d = np.zeros(windows.shape[:-1])
    for k in range(len(LO)):
        a += windows[..., k] * LO[k]
        d += centred[..., k] * HI[k]
    return a, d


def _synthesis(a, d):
    n = 2 * a.shape[-1]
    idx = _indices(n)
    out = np.zeros(a.shape[:-1] + (n,))
    for k in range(len(LO)):
        # for fixed k the targets idx[:, k] are distinct, so += is safe
        out[..., idx[:, k]] += a * LO[k] + d * HI[k]
    return out


def dwt(signal, levels=DEFAULT_LEVELS):
    """Multi-level periodic sym4 decomposition along the last axis.

    Odd-length approximations are extended by one repeated sample before
    each analysis step; the original lengths are kept for reconstruction.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    if levels > max_level(n):
        raise ConfigError(
            f"signal of length {n} is too short for {levels} sym4 levels (max {max_level(n)})"
        )
    details, lengths = [], []
    a = x
    for _ in range(levels):
        lengths.append(a.shape[-1])
        a, d = _analysis(a)
        details.append(d)
    return WaveletDecomposition(a, details, lengths)


def idwt(decomposition):
    a = decomposition.approximation
    for d, length in zip(reversed(decomposition.details), reversed(decomposition.lengths)):
        a = _synthesis(a, d)[..., :length]
    return a


def soft_threshold(coefficients, threshold):
    c = np.asarray(coefficients)
    return np.sign(c) * np.maximum(np.abs(c) - threshold, 0.0)


def universal_threshold(decomposition, n):
    """Noise level from the finest details (MAD / 0.6745) times sqrt(2 ln n)."""
    sigma = np.median(np.abs(decomposition.details[0]), axis=-1) / MAD_SCALE
    return sigma * np.sqrt(2.0 * np.log(n))


def denoise(signal, levels=DEFAULT_LEVELS, threshold=None):
    """Soft-threshold every detail level and reconstruct.

    ``threshold`` overrides the universal threshold; the approximation band
    is never modified.
    """
    x = np.asarray(signal, dtype=np.float64)
    dec = dwt(x, levels)
    t = universal_threshold(dec, x.shape[-1]) if threshold is None else np.asarray(threshold, dtype=np.float64)
    t = np.asarray(t)[..., None] if np.ndim(t) else t
    dec.details = [soft_threshold(d, t) for d in dec.details]
    return idwt(dec)


def normalize(beat, floor=1e-10):
    """Z-score each beat (last axis). Beats with std below ``floor`` map to zeros."""
    x = np.asarray(beat, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    flat = std < floor
    out = (x - mean) / np.where(flat, 1.0, std)
    return np.where(flat, 0.0, out)


class WaveletDenoiser(TransformerMixin, BaseEstimator):
    """Stateless transformer applying :func:`denoise` to each row."""

    def __init__(self, levels=DEFAULT_LEVELS, threshold=None):
        self.levels = levels
        self.threshold = threshold

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return denoise(np.asarray(X, dtype=np.float64), self.levels, self.threshold)


class BeatNormalizer(TransformerMixin, BaseEstimator):
    def __init__(self, floor=1e-10):
        self.floor = floor

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return normalize(X, self.floor)
