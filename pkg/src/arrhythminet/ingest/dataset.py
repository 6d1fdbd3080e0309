"""Beat segmentation, class balancing, train/test splitting and beat files."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, DataError
from .wfdb import ANNOTATION_SYMBOLS

CLASS_NAMES = ("NSR", "LBBB", "RBBB", "APC", "PVC")
SYMBOL_TO_CLASS = {"N": 0, "L": 1, "R": 2, "A": 3, "V": 4}
BEAT_LENGTH = 360
WINDOW_BEFORE = 179
WINDOW_AFTER = 180
SPLIT_MODES = ("leakage-safe", "paper-faithful")

BEATS_MAGIC = b"BEAT1"
BEATS_VERSION = 1


@dataclass
class BeatDataset:
    beats: np.ndarray  # (n, 360)
    labels: np.ndarray  # (n,) class indices into CLASS_NAMES
    record_ids: np.ndarray  # (n,) str
    ann_indices: np.ndarray  # (n,) index of the source annotation within its record

    def __post_init__(self):
        self.beats = np.asarray(self.beats)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.record_ids = np.asarray(self.record_ids, dtype=str)
        self.ann_indices = np.asarray(self.ann_indices, dtype=np.int64)
        n = len(self.labels)
        if self.beats.ndim != 2 or self.beats.shape[0] != n:
            raise DataError(f"beats must be (n, length) with n={n}, got {self.beats.shape}")
        if len(self.record_ids) != n or len(self.ann_indices) != n:
            raise DataError("provenance arrays must have one entry per beat")
        if n and self.labels.max() >= len(CLASS_NAMES):
            raise DataError("labels must be in the five-class set")

    @classmethod
    def empty(cls, length=BEAT_LENGTH):
        return cls(np.zeros((0, length)), np.zeros(0), np.zeros(0, dtype=str), np.zeros(0))

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return BeatDataset(self.beats[idx], self.labels[idx], self.record_ids[idx], self.ann_indices[idx])

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return BeatDataset.empty()
        return BeatDataset(
            np.concatenate([p.beats for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.record_ids for p in parts]),
            np.concatenate([p.ann_indices for p in parts]),
        )

    def provenance(self):
        return list(zip(self.record_ids.tolist(), self.ann_indices.tolist()))

    def class_counts(self):
        counts = np.bincount(self.labels, minlength=len(CLASS_NAMES))
        return {name: int(c) for name, c in zip(CLASS_NAMES, counts)}


@dataclass
class SegmentStats:
    record_id: str
    kept: dict = field(default_factory=dict)
    skipped_boundary: int = 0
    excluded_symbols: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "record_id": self.record_id,
            "kept": self.kept,
            "skipped_boundary": self.skipped_boundary,
            "excluded_symbols": self.excluded_symbols,
        }


def segment_beats(record, class_map=None, signal=None, channel=0,
                  before=WINDOW_BEFORE, after=WINDOW_AFTER):
    """Cut a window ``[t - before, t + after]`` around every mapped annotation.

    ``signal`` lets callers pass an already denoised channel; otherwise the
    physical-unit channel is used. Beats whose window crosses the record
    boundary are skipped and counted.
    """
    class_map = SYMBOL_TO_CLASS if class_map is None else class_map
    x = record.physical(channel) if signal is None else np.asarray(signal, dtype=np.float64)
    ann = record.annotations
    stats = SegmentStats(record.record_id, kept={name: 0 for name in CLASS_NAMES})
    beats, labels, indices = [], [], []
    for i, (t, code) in enumerate(zip(ann.samples, ann.codes)):
        sym = ANNOTATION_SYMBOLS.get(int(code), "?")
        if sym not in class_map:
            stats.excluded_symbols[sym] = stats.excluded_symbols.get(sym, 0) + 1
            continue
        lo, hi = int(t) - before, int(t) + after + 1
        if lo < 0 or hi > len(x):
            stats.skipped_boundary += 1
            continue
        beats.append(x[lo:hi])
        labels.append(class_map[sym])
        indices.append(i)
        stats.kept[CLASS_NAMES[class_map[sym]]] += 1
    length = before + after + 1
    ds = BeatDataset(
        np.array(beats).reshape(len(beats), length),
        np.array(labels, dtype=np.uint8),
        np.full(len(beats), record.record_id),
        np.array(indices, dtype=np.int64),
    )
    return ds, stats


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def _resample(rng, idx, target):
    """Undersample without replacement, or keep all and top up with duplicates."""
    idx = np.asarray(idx)
    if len(idx) >= target:
        return np.sort(rng.choice(idx, size=target, replace=False))
    extra = rng.choice(idx, size=target - len(idx), replace=True)
    return np.concatenate([idx, extra])


def balance_and_split(dataset, mode="leakage-safe", seed=0, target_per_class=6000, test_fraction=0.2):
    """Balance classes to ``target_per_class`` and split into train/test.

    ``paper-faithful`` balances first and then splits each class 80/20, so
    duplicated minority beats can land on both sides. ``leakage-safe``
    splits the unique beats first, balances only the training fold and
    undersamples the test fold without duplication.

    Returns ``(train, test, report)``.
    """
    if mode not in SPLIT_MODES:
        raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {mode!r}")
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    counts = np.bincount(dataset.labels, minlength=len(CLASS_NAMES))
    empty = [CLASS_NAMES[c] for c in range(len(CLASS_NAMES)) if counts[c] == 0]
    if empty:
        raise DataError(f"no beats for class(es) {', '.join(empty)}; cannot balance")

    test_target = _round_half_up(target_per_class * test_fraction)
    train_target = target_per_class - test_target
    train_idx, test_idx = [], []
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        idx = np.flatnonzero(dataset.labels == c)
        if mode == "paper-faithful":
            pool = rng.permutation(_resample(rng, idx, target_per_class))
            n_test = _round_half_up(len(pool) * test_fraction)
            te, tr = pool[:n_test], pool[n_test:]
            unique_train = len(np.unique(tr))
        else:
            shuffled = rng.permutation(idx)
            n_test = _round_half_up(len(shuffled) * test_fraction)
            te_pool, tr_pool = shuffled[:n_test], shuffled[n_test:]
            if len(tr_pool) == 0:
                raise DataError(f"class {name} has too few beats ({len(idx)}) to split")
            te = te_pool[: min(test_target, len(te_pool))]
            tr = _resample(rng, tr_pool, train_target)
            unique_train = len(np.unique(tr))
        train_idx.append(tr)
        test_idx.append(te)
        per_class[name] = {
            "available": int(len(idx)),
            "train": int(len(tr)),
            "train_unique": int(unique_train),
            "test": int(len(te)),
            "duplicates": int(len(tr) - unique_train),
        }

    train = dataset.subset(rng.permutation(np.concatenate(train_idx)))
    test = dataset.subset(rng.permutation(np.concatenate(test_idx)))
    overlap = len(set(train.provenance()) & set(test.provenance()))
    report = {
        "mode": mode,
        "seed": seed,
        "target_per_class": target_per_class,
        "test_fraction": test_fraction,
        "per_class": per_class,
        "train_size": len(train),
        "test_size": len(test),
        "provenance_overlap": overlap,
    }
    if mode == "paper-faithful" and overlap:
        report["warning"] = (
            f"{overlap} beats appear in both folds: balancing before splitting duplicates "
            "minority beats across the split"
        )
    return train, test, report


# -- BEAT1 files ---------------------------------------------------------
#
# b"BEAT1" | version u8 | n u32 | length u32 | float32 LE beats (n*length)
# | uint8 labels (n) | provenance length u32 | provenance JSON [[record, index], ...]

_BEATS_PREFIX = struct.Struct("<5sBII")


def write_beats(dataset, path):
    prov = json.dumps([[r, int(i)] for r, i in dataset.provenance()], separators=(",", ":")).encode("utf-8")
    n, length = dataset.beats.shape
    with open(path, "wb") as f:
        f.write(_BEATS_PREFIX.pack(BEATS_MAGIC, BEATS_VERSION, n, length))
        f.write(np.ascontiguousarray(dataset.beats, dtype="<f4").tobytes())
        f.write(dataset.labels.astype(np.uint8).tobytes())
        f.write(struct.pack("<I", len(prov)))
        f.write(prov)


def read_beats(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _BEATS_PREFIX.size:
        raise DataError(f"{path}: too short to be a beats file")
    magic, version, n, length = _BEATS_PREFIX.unpack_from(data)
    if magic != BEATS_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {BEATS_MAGIC!r}")
    if version != BEATS_VERSION:
        raise DataError(f"{path}: unsupported beats file version {version}")
    off = _BEATS_PREFIX.size
    need = off + 4 * n * length + n + 4
    if len(data) < need:
        raise DataError(f"{path}: truncated beats file")
    beats = np.frombuffer(data, dtype="<f4", count=n * length, offset=off).reshape(n, length).astype(np.float32)
    off += 4 * n * length
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
    off += n
    (plen,) = struct.unpack_from("<I", data, off)
    off += 4
    prov = json.loads(data[off : off + plen].decode("utf-8")) if plen else []
    if len(prov) != n:
        raise DataError(f"{path}: provenance has {len(prov)} entries for {n} beats")
    record_ids = np.array([p[0] for p in prov], dtype=str) if n else np.zeros(0, dtype=str)
    ann_idx = np.array([p[1] for p in prov], dtype=np.int64)
    return BeatDataset(beats, labels, record_ids, ann_idx)
