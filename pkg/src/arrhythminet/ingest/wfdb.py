"""Reader and writer for the parts of the WFDB format used by MIT-BIH.

Covers text headers, format-212 signal files and MIT-format annotation
files (``.atr``). Other signal formats are rejected explicitly.
"""

import math
import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DataError, HeaderParseError, TruncatedStreamError, UnsupportedFormatError

DEFAULT_FS = 250.0
DEFAULT_GAIN = 200.0

# MIT annotation codes (ecgcodes.h). 15 and 17 are unassigned.
ANNOTATION_SYMBOLS = {
    0: " ", 1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T", 20: "*",
    21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t", 28: "+", 29: "u",
    30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n", 36: "@", 37: "x", 38: "f",
    39: "(", 40: ")", 41: "r",
}
SYMBOL_CODES = {s: c for c, s in ANNOTATION_SYMBOLS.items() if c}

_SKIP, _NUM, _SUB, _CHAN, _AUX = 59, 60, 61, 62, 63


@dataclass
class SignalInfo:
    file_name: str
    fmt: int
    gain: float = DEFAULT_GAIN
    baseline: int = 0
    units: str = "mV"
    adc_resolution: int = 12
    adc_zero: int = 0
    initial_value: int = None
    checksum: int = None
    block_size: int = 0
    description: str = ""
    byte_offset: int = 0


@dataclass
class RecordHeader:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int = None
    signals: list = field(default_factory=list)
    fs_defaulted: bool = False
    comments: list = field(default_factory=list)


@dataclass
class Annotations:
    samples: np.ndarray
    codes: np.ndarray
    subtypes: np.ndarray = None
    channels: np.ndarray = None
    nums: np.ndarray = None
    aux: list = None

    @property
    def symbols(self):
        return [ANNOTATION_SYMBOLS.get(int(c), "?") for c in self.codes]

    def __len__(self):
        return len(self.samples)


@dataclass
class Record:
    record_id: str
    fs: float
    gains: list
    baselines: list
    samples: np.ndarray  # (n_samples, n_channels) ADC integers
    annotations: Annotations = None
    signal_names: list = field(default_factory=list)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def physical(self, channel=0):
        """Channel in physical units: (sample - baseline) / gain."""
        return (self.samples[:, channel].astype(np.float64) - self.baselines[channel]) / self.gains[channel]


# -- header ------------------------------------------------------------

_RECORD_LINE = re.compile(
    r"^(?P<name>[\w\-]+)(?:/(?P<nseg>\d+))?\s+(?P<nsig>\d+)"
    r"(?:\s+(?P<fs>[\d.eE+\-]+)(?:/(?P<cfreq>[\d.eE+\-]+)(?:\((?P<base>[\d.eE+\-]+)\))?)?"
    r"(?:\s+(?P<nsamp>\d+)(?:\s+(?P<time>\S+)(?:\s+(?P<date>\S+))?)?)?)?\s*$"
)
_FMT_FIELD = re.compile(r"^(?P<fmt>\d+)(?:x\d+)?(?::\d+)?(?:\+(?P<offset>\d+))?$")
_GAIN_FIELD = re.compile(r"^(?P<gain>[\d.eE+\-]+)(?:\((?P<baseline>-?\d+)\))?(?:/(?P<units>\S+))?$")


def _parse_signal_line(line, lineno):
    parts = line.split(None, 8)
    if len(parts) < 2:
        raise HeaderParseError(f"signal line needs at least a file name and format: {line!r}", lineno)
    m = _FMT_FIELD.match(parts[1])
    if not m:
        raise HeaderParseError(f"bad format field {parts[1]!r}", lineno)
    fmt = int(m.group("fmt"))
    if fmt != 212:
        raise UnsupportedFormatError(f"line {lineno}: signal format {fmt} is not supported (only 212)")
    info = SignalInfo(file_name=parts[0], fmt=fmt, byte_offset=int(m.group("offset") or 0))
    baseline = None
    try:
        if len(parts) > 2:
            g = _GAIN_FIELD.match(parts[2])
            if not g:
                raise HeaderParseError(f"bad gain field {parts[2]!r}", lineno)
            gain = float(g.group("gain"))
            info.gain = gain if gain != 0 else DEFAULT_GAIN
            if g.group("baseline") is not None:
                baseline = int(g.group("baseline"))
            if g.group("units"):
                info.units = g.group("units")
        if len(parts) > 3:
            info.adc_resolution = int(parts[3])
        if len(parts) > 4:
            info.adc_zero = int(parts[4])
        if len(parts) > 5:
            info.initial_value = int(parts[5])
        if len(parts) > 6:
            info.checksum = int(parts[6])
        if len(parts) > 7:
            info.block_size = int(parts[7])
        if len(parts) > 8:
            info.description = parts[8].strip()
    except ValueError as exc:
        raise HeaderParseError(f"non-numeric signal field: {exc}", lineno) from exc
    # baseline defaults to ADC zero when absent
    info.baseline = baseline if baseline is not None else info.adc_zero
    return info


def parse_header(data):
    """Parse a WFDB header given as ``bytes`` or ``str``."""
    if isinstance(data, bytes):
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError as exc:
            lineno = data[: exc.start].count(b"\n") + 1
            raise HeaderParseError("non-ASCII bytes in header", lineno) from exc
    else:
        text = data
    header = None
    comments = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        if header is None:
            m = _RECORD_LINE.match(line)
            if not m:
                raise HeaderParseError(f"malformed record line {line!r}", lineno)
            if m.group("nseg"):
                raise UnsupportedFormatError(f"line {lineno}: multi-segment records are not supported")
            fs = m.group("fs")
            header = RecordHeader(
                record_name=m.group("name"),
                n_signals=int(m.group("nsig")),
                fs=float(fs) if fs else DEFAULT_FS,
                n_samples=int(m.group("nsamp")) if m.group("nsamp") else None,
                fs_defaulted=fs is None,
            )
            if fs is None:
                warnings.warn(
                    f"header for {header.record_name} has no sampling frequency; using {DEFAULT_FS:g} Hz",
                    stacklevel=2,
                )
            continue
        if len(header.signals) >= header.n_signals:
            raise HeaderParseError(f"more signal lines than the declared {header.n_signals}", lineno)
        header.signals.append(_parse_signal_line(line, lineno))
    if header is None:
        raise HeaderParseError("no record line found", 1)
    if len(header.signals) != header.n_signals:
        raise HeaderParseError(
            f"declared {header.n_signals} signals but found {len(header.signals)} signal lines",
            len(text.splitlines()),
        )
    header.comments = comments
    return header


def format_header(header):
    line = f"{header.record_name} {header.n_signals} {header.fs:g}"
    if header.n_samples is not None:
        line += f" {header.n_samples}"
    lines = [line]
    for s in header.signals:
        fields = [s.file_name, str(s.fmt), f"{s.gain:g}({s.baseline})/{s.units}", str(s.adc_resolution),
                  str(s.adc_zero), str(s.initial_value or 0), str(s.checksum or 0), str(s.block_size)]
        if s.description:
            fields.append(s.description)
        lines.append(" ".join(fields))
    lines.extend(f"# {c}" for c in header.comments)
    return "\n".join(lines) + "\n"


# -- format 212 ----------------------------------------------------------


def bytes_for_212(n_values):
    return math.ceil(n_values * 3 / 2)


def decode_212(data, n_samples, n_channels=1):
    """Unpack format-212 bytes into an ``(n_samples, n_channels)`` int array.

    Every 3 bytes hold two 12-bit two's-complement samples; samples are
    interleaved by channel.
    """
    total = n_samples * n_channels
    needed = bytes_for_212(total)
    if len(data) < needed:
        raise TruncatedStreamError(
            f"format-212 stream too short: {n_samples} samples x {n_channels} channels need {needed} bytes",
            offset=len(data),
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=needed)
    if needed % 3:
        raw = np.concatenate([raw, np.zeros(3 - needed % 3, dtype=np.uint8)])
    triples = raw.reshape(-1, 3).astype(np.int32)
    b0, b1, b2 = triples[:, 0], triples[:, 1], triples[:, 2]
    out = np.empty(2 * len(triples), dtype=np.int32)
    out[0::2] = ((b1 & 0x0F) << 8) | b0
    out[1::2] = ((b1 & 0xF0) << 4) | b2
    out[out > 2047] -= 4096
    return out[:total].reshape(n_samples, n_channels)


def encode_212(samples):
    """Pack integer samples (flat, or ``(n_samples, n_channels)``) into format-212 bytes."""
    vals = np.asarray(samples).reshape(-1).astype(np.int64)
    if vals.size and (vals.min() < -2048 or vals.max() > 2047):
        raise DataError("format 212 holds 12-bit samples in [-2048, 2047]")
    vals = vals & 0xFFF
    if vals.size % 2:
        vals = np.concatenate([vals, [0]])
    s1, s2 = vals[0::2], vals[1::2]
    out = np.empty((len(s1), 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
    out[:, 2] = s2 & 0xFF
    return out.reshape(-1)[: bytes_for_212(np.asarray(samples).size)].tobytes()


def signal_checksum(values):
    """16-bit two's-complement sum used by WFDB header checksums."""
    s = int(np.sum(np.asarray(values, dtype=np.int64))) & 0xFFFF
    return s - 0x10000 if s >= 0x8000 else s


# -- annotations ---------------------------------------------------------


def read_annotations(data):
    """Parse an MIT-format annotation file.

    Handles SKIP, NUM, SUB, CHAN and AUX pseudo-annotations; ``chan`` and
    ``num`` carry over from the previous annotation when not given.
    """
    buf = np.frombuffer(data, dtype=np.uint8)
    if len(buf) % 2:
        buf = buf[:-1]
    pairs = buf.reshape(-1, 2).astype(np.int64)
    samples, codes, subs, chans, nums, aux = [], [], [], [], [], []
    t = 0
    i = 0
    chan = num = 0
    n = len(pairs)
    while i < n:
        word = int(pairs[i, 0]) | (int(pairs[i, 1]) << 8)
        code = word >> 10
        if word == 0:
            break
        if code == _SKIP:
            if i + 2 >= n:
                raise TruncatedStreamError("annotation SKIP record truncated", offset=2 * i)
            hi = int(pairs[i + 1, 0]) | (int(pairs[i + 1, 1]) << 8)
            lo = int(pairs[i + 2, 0]) | (int(pairs[i + 2, 1]) << 8)
            delta = (hi << 16) | lo
            if delta >= 1 << 31:
                delta -= 1 << 32
            t += delta
            i += 3
            continue
        if code in (_NUM, _SUB, _CHAN, _AUX):
            if not codes:
                raise DataError(f"annotation modifier before any annotation at byte {2 * i}")
            value = word & 0x3FF
            if code == _AUX:
                length = value
                nbytes = length + (length & 1)
                start = 2 * (i + 1)
                if start + length > len(buf):
                    raise TruncatedStreamError("annotation AUX string truncated", offset=start)
                aux[-1] = bytes(buf[start : start + length]).decode("latin-1")
                i += 1 + nbytes // 2
                continue
            low = value & 0xFF
            if code == _NUM:
                num = low - 256 if low > 127 else low
                nums[-1] = num
            elif code == _SUB:
                subs[-1] = low - 256 if low > 127 else low
            else:
                chan = low
                chans[-1] = chan
            i += 1
            continue
        t += word & 0x3FF
        samples.append(t)
        codes.append(code)
        subs.append(0)
        chans.append(chan)
        nums.append(num)
        aux.append("")
        i += 1
    return Annotations(
        samples=np.array(samples, dtype=np.int64),
        codes=np.array(codes, dtype=np.int64),
        subtypes=np.array(subs, dtype=np.int64),
        channels=np.array(chans, dtype=np.int64),
        nums=np.array(nums, dtype=np.int64),
        aux=aux,
    )


def _word(value):
    return bytes((value & 0xFF, (value >> 8) & 0xFF))


def write_annotations(samples, symbols_or_codes):
    """Encode annotations (sample index, symbol or numeric code) in MIT format."""
    out = bytearray()
    prev = 0
    for sample, sym in zip(samples, symbols_or_codes):
        code = SYMBOL_CODES[sym] if isinstance(sym, str) else int(sym)
        if not 0 < code < _SKIP:
            raise DataError(f"annotation code {code} cannot be written")
        delta = int(sample) - prev
        if delta < 0:
            raise DataError("annotation samples must be non-decreasing")
        if delta > 0x3FF:
            out += _word(_SKIP << 10) + _word((delta >> 16) & 0xFFFF) + _word(delta & 0xFFFF)
            delta = 0
        out += _word((code << 10) | delta)
        prev = int(sample)
    out += b"\x00\x00"
    return bytes(out)


# -- records -------------------------------------------------------------


def record_paths(data_dir, record_id):
    base = os.path.join(os.fspath(data_dir), str(record_id))
    return {"hea": base + ".hea", "atr": base + ".atr"}


def read_record(data_dir, record_id, annotator="atr"):
    """Load header, format-212 samples and annotations of one record."""
    data_dir = os.fspath(data_dir)
    hea = os.path.join(data_dir, f"{record_id}.hea")
    atr = os.path.join(data_dir, f"{record_id}.{annotator}")
    missing = [p for p in (hea, atr) if not os.path.exists(p)]
    header = None
    if os.path.exists(hea):
        with open(hea, "rb") as f:
            header = parse_header(f.read())
        for s in header.signals:
            p = os.path.join(data_dir, s.file_name)
            if not os.path.exists(p) and p not in missing:
                missing.append(p)
    if missing:
        raise DataError("missing WFDB files: " + ", ".join(sorted(set(missing))))

    files = {}
    for idx, s in enumerate(header.signals):
        files.setdefault(s.file_name, []).append(idx)
    columns = [None] * header.n_signals
    for file_name, idxs in files.items():
        with open(os.path.join(data_dir, file_name), "rb") as f:
            data = f.read()[header.signals[idxs[0]].byte_offset :]
        n = header.n_samples
        if n is None:
            n = (len(data) * 2 // 3) // len(idxs)
        block = decode_212(data, n, len(idxs))
        for j, idx in enumerate(idxs):
            columns[idx] = block[:, j]
    samples = np.stack(columns, axis=1)
    for idx, s in enumerate(header.signals):
        if s.checksum and signal_checksum(samples[:, idx]) != s.checksum:
            warnings.warn(f"{record_id}: checksum mismatch on signal {idx}", stacklevel=2)

    with open(atr, "rb") as f:
        ann = read_annotations(f.read())
    if len(ann) and (np.any(np.diff(ann.samples) < 0) or ann.samples[-1] >= len(samples)):
        warnings.warn(f"{record_id}: annotations out of order or past the end of the record", stacklevel=2)
    return Record(
        record_id=str(record_id),
        fs=header.fs,
        gains=[s.gain for s in header.signals],
        baselines=[s.baseline for s in header.signals],
        samples=samples,
        annotations=ann,
        signal_names=[s.description for s in header.signals],
    )


def write_record(data_dir, record_id, samples, fs, annotation_samples, annotation_symbols,
                 gain=DEFAULT_GAIN, baseline=1024, names=None):
    """Write ``.hea``/``.dat``/``.atr`` for an ``(n_samples, n_channels)`` ADC array."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, ch = samples.shape
    names = names or [f"ch{i}" for i in range(ch)]
    dat = f"{record_id}.dat"
    header = RecordHeader(record_name=str(record_id), n_signals=ch, fs=fs, n_samples=n)
    for i in range(ch):
        header.signals.append(SignalInfo(
            file_name=dat, fmt=212, gain=gain, baseline=baseline, adc_resolution=12, adc_zero=0,
            initial_value=int(samples[0, i]), checksum=signal_checksum(samples[:, i]), description=names[i],
        ))
    os.makedirs(data_dir, exist_ok=True)
    with open(os.path.join(data_dir, f"{record_id}.hea"), "w") as f:
        f.write(format_header(header))
    with open(os.path.join(data_dir, dat), "wb") as f:
        f.write(encode_212(samples))
    with open(os.path.join(data_dir, f"{record_id}.atr"), "wb") as f:
        f.write(write_annotations(annotation_samples, annotation_symbols))
    return header
