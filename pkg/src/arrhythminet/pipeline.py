"""Record-level preprocessing: denoise, segment, normalise."""

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .exceptions import DataError
from .ingest.dataset import BeatDataset, segment_beats
from .ingest.wfdb import read_record
from .wavelet import DEFAULT_LEVELS, denoise, normalize


@dataclass
class PreprocessConfig:
    wavelet_levels: int = DEFAULT_LEVELS
    threshold: float = None  # None = universal threshold
    denoise: bool = True
    normalize: bool = True
    channel: int = 0

    def to_dict(self):
        return asdict(self)


def discover_records(data_dir):
    """Record ids with a ``.hea`` file in ``data_dir``, sorted."""
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory {data_dir} does not exist")
    ids = [f[:-4] for f in os.listdir(data_dir) if f.endswith(".hea")]
    return sorted(ids, key=lambda r: (not r.isdigit(), int(r) if r.isdigit() else 0, r))


def process_record(record, config=None):
    config = config or PreprocessConfig()
    signal = None
    if config.denoise:
        signal = denoise(record.physical(config.channel), config.wavelet_levels, config.threshold)
    ds, stats = segment_beats(record, signal=signal, channel=config.channel)
    if config.normalize and len(ds):
        ds.beats = normalize(ds.beats)
    return ds, stats


def build_dataset(data_dir, record_ids=None, config=None, threads=1):
    """Load, denoise and segment every record; merge ordered by record id.

    Returns ``(dataset, per-record stats list)``.
    """
    config = config or PreprocessConfig()
    record_ids = list(record_ids) if record_ids else discover_records(data_dir)
    if not record_ids:
        raise DataError(f"no WFDB records found in {data_dir}")
    for rid in record_ids:
        if not re.fullmatch(r"[\w\-]+", str(rid)):
            raise DataError(f"invalid record id {rid!r}")

    def work(rid):
        return process_record(read_record(data_dir, rid), config)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, record_ids))
    else:
        results = [work(rid) for rid in record_ids]
    return BeatDataset.concat([ds for ds, _ in results]), [s for _, s in results]
