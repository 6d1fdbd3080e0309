"""Synthetic five-morphology ECG records written in WFDB format.

Beats are sums of Gaussian waves (P, QRS components, T) with class-specific
shapes and timing, plus baseline wander and white noise. They stand in for
MIT-BIH files in tests and demos; they are not a substitute for real data
when judging classifier accuracy.
"""

import numpy as np

from .wfdb import write_record

FS = 360

# (amplitude mV, centre offset s relative to R, width s)
_MORPHOLOGY = {
    "N": [(0.15, -0.20, 0.025), (-0.10, -0.03, 0.008), (1.20, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.30, 0.25, 0.040)],
    "L": [(0.15, -0.22, 0.025), (0.80, -0.025, 0.020), (0.90, 0.035, 0.020), (-0.30, 0.32, 0.050)],
    "R": [(0.15, -0.20, 0.025), (0.90, 0.0, 0.010), (-0.40, 0.035, 0.012), (0.60, 0.075, 0.015), (0.20, 0.28, 0.040)],
    "A": [(-0.12, -0.14, 0.018), (-0.10, -0.03, 0.008), (1.15, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.28, 0.24, 0.040)],
    "V": [(1.50, 0.0, 0.035), (-0.60, 0.085, 0.030), (-0.50, 0.32, 0.060)],
}
# RR interval before the beat, as a fraction of the running RR
_PREMATURITY = {"N": 1.0, "L": 1.0, "R": 1.0, "A": 0.72, "V": 0.65}
BEAT_SYMBOLS = tuple(_MORPHOLOGY)


def beat_wave(symbol, t, rng=None, jitter=0.08):
    """Evaluate one beat's waveform at times ``t`` (seconds from the R peak)."""
    out = np.zeros_like(t, dtype=np.float64)
    for amp, centre, width in _MORPHOLOGY[symbol]:
        if rng is not None:
            amp *= 1 + jitter * rng.standard_normal()
            centre += 0.1 * jitter * width * rng.standard_normal()
            width *= 1 + 0.5 * jitter * rng.standard_normal()
        out += amp * np.exp(-0.5 * ((t - centre) / width) ** 2)
    return out


def synthetic_record(n_beats=300, weights=None, seed=0, heart_rate=75.0, noise_mv=0.03,
                     extra_annotations=True):
    """Return ``(signal_mv, annotation_samples, annotation_symbols)`` for one record.

    ``weights`` maps beat symbols to relative frequencies (default uniform).
    With ``extra_annotations`` a few rhythm (``+``) and noise (``~``)
    annotations are interleaved; they carry no beat class.
    """
    rng = np.random.default_rng(seed)
    weights = weights or {s: 1.0 for s in BEAT_SYMBOLS}
    syms = list(weights)
    p = np.array([weights[s] for s in syms], dtype=np.float64)
    p /= p.sum()
    labels = rng.choice(syms, size=n_beats, p=p)

    rr = 60.0 / heart_rate
    times, t = [], 0.6
    prev = "N"
    for s in labels:
        step = rr * _PREMATURITY[s] * (1 + 0.03 * rng.standard_normal())
        if prev == "V":
            step += rr * 0.35  # compensatory pause
        t += step
        times.append(t)
        prev = s
    duration = times[-1] + 0.8
    n = int(duration * FS)
    grid = np.arange(n) / FS
    sig = np.zeros(n)
    for s, tr in zip(labels, times):
        lo, hi = max(0, int((tr - 0.5) * FS)), min(n, int((tr + 0.6) * FS))
        sig[lo:hi] += beat_wave(s, grid[lo:hi] - tr, rng)
    sig += 0.1 * np.sin(2 * np.pi * 0.3 * grid + rng.uniform(0, 2 * np.pi))
    sig += noise_mv * rng.standard_normal(n)

    samples = [int(round(tr * FS)) for tr in times]
    symbols = [str(s) for s in labels]
    if extra_annotations and n_beats > 4:
        samples.insert(0, 1)
        symbols.insert(0, "+")
        k = n_beats // 2
        mid = (samples[k] + samples[k + 1]) // 2
        samples.insert(k + 1, mid)
        symbols.insert(k + 1, "~")
    return sig, np.array(samples, dtype=np.int64), symbols


def write_synthetic_records(data_dir, record_ids, n_beats=300, weights=None, seed=0,
                            gain=200.0, baseline=1024):
    """Write one synthetic two-channel record per id; channel 1 is a scaled copy."""
    written = []
    for i, rid in enumerate(record_ids):
        sig, ann, syms = synthetic_record(n_beats, weights, seed=seed + i)
        adc0 = np.clip(np.round(sig * gain + baseline), -2048, 2047)
        adc1 = np.clip(np.round(0.6 * sig * gain + baseline), -2048, 2047)
        write_record(data_dir, rid, np.stack([adc0, adc1], axis=1).astype(np.int64), FS, ann, syms,
                     gain=gain, baseline=baseline, names=["MLII", "V1"])
        written.append(str(rid))
    return written
