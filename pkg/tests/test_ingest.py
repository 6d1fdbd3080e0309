import json
import warnings

import numpy as np
import pytest
from oracles import encode_212_loops

from arrhythminet.exceptions import (
    ConfigError,
    DataError,
    HeaderParseError,
    TruncatedStreamError,
    UnsupportedFormatError,
)
from arrhythminet.ingest import (
    CLASS_NAMES,
    BeatDataset,
    balance_and_split,
    decode_212,
    encode_212,
    parse_header,
    read_annotations,
    read_beats,
    read_record,
    segment_beats,
    write_annotations,
    write_beats,
)
from arrhythminet.ingest.synthetic import write_synthetic_records
from arrhythminet.ingest.wfdb import ANNOTATION_SYMBOLS, Annotations, Record, format_header


class TestFormat212:
    def test_spec_examples(self):
        assert decode_212(bytes([0x34, 0x02, 0x00]), 2, 1).ravel().tolist() == [564, 0]
        assert decode_212(bytes([0x00, 0xF0, 0x1A]), 2, 1).ravel().tolist() == [0, -230]

    def test_extremes(self):
        vals = np.array([-2048, 2047, -1, 0, 1, -2048])
        assert np.array_equal(decode_212(encode_212(vals), 6, 1).ravel(), vals)

    @pytest.mark.parametrize("seed", range(1000))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        n_ch = int(rng.integers(1, 4))
        n = int(rng.integers(1, 200))
        vals = rng.integers(-2048, 2048, size=(n, n_ch))
        data = encode_212(vals)
        assert data == encode_212_loops(vals.ravel())
        assert np.array_equal(decode_212(data, n, n_ch), vals)
        assert encode_212(decode_212(data, n, n_ch)) == data

    def test_truncated_stream_reports_offset(self):
        with pytest.raises(TruncatedStreamError) as err:
            decode_212(bytes(10), 4, 2)
        assert err.value.offset == 10

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            encode_212([2048])

    def test_matches_reference_writer(self, tmp_path):
        wfdb = pytest.importorskip("wfdb")
        vals = np.random.default_rng(7).integers(-2048, 2048, size=(501, 2))
        wfdb.wrsamp("ref", fs=360, units=["mV", "mV"], sig_name=["a", "b"], d_signal=vals,
                    fmt=["212", "212"], adc_gain=[200, 200], baseline=[0, 0], write_dir=str(tmp_path))
        data = (tmp_path / "ref.dat").read_bytes()
        assert np.array_equal(decode_212(data, 501, 2), vals)
        assert data[: len(encode_212(vals))] == encode_212(vals)


class TestHeader:
    def test_record_line(self):
        h = parse_header("100 2 360 650000\n100.dat 212 200 11 1024 995 -22131 0 MLII\n"
                         "100.dat 212 200 11 1024 1011 20052 0 V5\n# 69 M 1085 1629 x1\n")
        assert (h.record_name, h.n_signals, h.fs, h.n_samples) == ("100", 2, 360.0, 650000)
        assert [s.fmt for s in h.signals] == [212, 212]
        assert [s.gain for s in h.signals] == [200.0, 200.0]
        assert h.signals[0].baseline == 1024  # ADC zero when no explicit baseline
        assert h.signals[1].description == "V5"
        assert h.comments == ["69 M 1085 1629 x1"]

    def test_gain_with_baseline_and_units(self):
        h = parse_header(b"r 1 360 10\nr.dat 212 100(-5)/uV 12 0 0 0 0 lead\n")
        s = h.signals[0]
        assert (s.gain, s.baseline, s.units) == (100.0, -5, "uV")

    def test_missing_sampling_rate_defaults_with_warning(self):
        with pytest.warns(UserWarning, match="sampling frequency"):
            h = parse_header("x 1\nx.dat 212\n")
        assert h.fs == 250.0 and h.fs_defaulted

    def test_garbage_names_line(self):
        with pytest.raises(HeaderParseError) as err:
            parse_header("# comment\n\n@@@ garbage ###\n")
        assert err.value.line_number == 3
        with pytest.raises(HeaderParseError) as err:
            parse_header(b"100 1 360 10\n\xff\xfe\x00junk\n")
        assert err.value.line_number == 2

    def test_unsupported_format(self):
        with pytest.raises(UnsupportedFormatError, match="16"):
            parse_header("a 1 360 5\na.dat 16 200 16 0 0 0 0 x\n")

    def test_signal_count_mismatch(self):
        with pytest.raises(HeaderParseError):
            parse_header("a 2 360 5\na.dat 212\n")

    def test_format_round_trip(self):
        text = "r 2 360 100\nr.dat 212 200(1024)/mV 12 0 7 -3 0 MLII\nr.dat 212 200(1024)/mV 12 0 1 2 0 V1\n"
        assert format_header(parse_header(text)) == text

    def test_reference_reader_agrees(self, tmp_path):
        wfdb = pytest.importorskip("wfdb")
        text = "rec 2 360 20\nrec.dat 212 200(1024)/mV 12 0 0 0 0 MLII\nrec.dat 212 180(1000)/mV 12 0 0 0 0 V1\n"
        (tmp_path / "rec.hea").write_text(text)
        ref = wfdb.rdheader(str(tmp_path / "rec"))
        mine = parse_header(text)
        assert ref.fs == mine.fs and ref.n_sig == mine.n_signals and ref.sig_len == mine.n_samples
        assert ref.adc_gain == [s.gain for s in mine.signals]
        assert ref.baseline == [s.baseline for s in mine.signals]


class TestAnnotations:
    def test_round_trip_with_skip(self):
        samples = [18, 77, 370, 5000, 5001, 700000]
        symbols = ["+", "N", "N", "V", "A", "L"]
        ann = read_annotations(write_annotations(samples, symbols))
        assert ann.samples.tolist() == samples
        assert ann.symbols == symbols

    def test_reference_writer_and_reader(self, tmp_path):
        wfdb = pytest.importorskip("wfdb")
        rng = np.random.default_rng(3)
        samples = np.cumsum(rng.integers(1, 3000, size=400))
        symbols = list(rng.choice(["N", "L", "R", "A", "V", "/", "+", "~", "F"], size=400))
        wfdb.wrann("r", "atr", samples, symbol=symbols, write_dir=str(tmp_path))
        mine = read_annotations((tmp_path / "r.atr").read_bytes())
        assert mine.samples.tolist() == samples.tolist()
        assert mine.symbols == symbols
        (tmp_path / "m.atr").write_bytes(write_annotations(samples, symbols))
        ref = wfdb.rdann(str(tmp_path / "m"), "atr")
        assert ref.sample.tolist() == samples.tolist()
        assert ref.symbol == symbols

    def test_code_table_matches_reference(self):
        wfdb = pytest.importorskip("wfdb")
        table = wfdb.io.annotation.ann_label_table
        ref = dict(zip(table["label_store"], table["symbol"]))
        for code, sym in ANNOTATION_SYMBOLS.items():
            if code:
                assert ref[code] == sym

    def test_modifier_before_annotation_rejected(self):
        with pytest.raises(DataError):
            read_annotations(bytes([0x05, 0xF0]))  # NUM with nothing to attach to


@pytest.fixture(scope="module")
def synthetic_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wfdb")
    write_synthetic_records(d, ["901", "902"], n_beats=200, seed=11)
    return d


class TestRecords:
    def test_read_record(self, synthetic_dir):
        rec = read_record(synthetic_dir, "901")
        assert rec.fs == 360.0
        assert rec.samples.shape[1] == 2
        assert rec.signal_names == ["MLII", "V1"]
        assert np.all(np.diff(rec.annotations.samples) > 0)

    def test_reference_reader_agrees(self, synthetic_dir):
        wfdb = pytest.importorskip("wfdb")
        rec = read_record(synthetic_dir, "902")
        ref = wfdb.rdrecord(str(synthetic_dir / "902"), physical=False)
        assert np.array_equal(ref.d_signal, rec.samples)
        ann = wfdb.rdann(str(synthetic_dir / "902"), "atr")
        assert ann.symbol == rec.annotations.symbols
        phys = wfdb.rdrecord(str(synthetic_dir / "902")).p_signal[:, 0]
        assert np.allclose(phys, rec.physical(0), atol=1e-9)

    def test_missing_files_listed(self, tmp_path, synthetic_dir):
        (tmp_path / "901.hea").write_bytes((synthetic_dir / "901.hea").read_bytes())
        with pytest.raises(DataError) as err:
            read_record(tmp_path, "901")
        assert "901.atr" in str(err.value) and "901.dat" in str(err.value)


def _record(n, ann_samples, symbols):
    codes = {s: c for c, s in ANNOTATION_SYMBOLS.items()}
    ann = Annotations(np.array(ann_samples), np.array([codes[s] for s in symbols]))
    x = np.arange(n)[:, None] * np.ones((1, 2), dtype=np.int64)
    return Record("t", 360.0, [200.0, 200.0], [0, 0], x, ann)


class TestSegment:
    def test_window_and_units(self):
        rec = _record(2000, [500, 1000], ["N", "V"])
        ds, stats = segment_beats(rec)
        assert ds.beats.shape == (2, 360)
        assert ds.beats[0, 0] == (500 - 179) / 200 and ds.beats[0, -1] == (500 + 180) / 200
        assert ds.labels.tolist() == [0, 4]
        assert stats.kept["PVC"] == 1

    def test_boundaries_skipped_and_counted(self):
        rec = _record(650000, [100, 179, 649819, 649820], ["N", "N", "N", "N"])
        ds, stats = segment_beats(rec)
        assert ds.ann_indices.tolist() == [1, 2]
        assert stats.skipped_boundary == 2

    def test_unmapped_codes_excluded(self):
        rec = _record(5000, [400, 800, 1200, 1600], ["/", "N", "+", "A"])
        ds, stats = segment_beats(rec)
        assert ds.ann_indices.tolist() == [1, 3]
        assert stats.excluded_symbols == {"/": 1, "+": 1}

    def test_synthetic_record_labels(self, synthetic_dir):
        ds, stats = segment_beats(read_record(synthetic_dir, "901"))
        assert set(np.unique(ds.labels)) <= set(range(5))
        assert stats.excluded_symbols == {"+": 1, "~": 1}
        assert np.all(ds.record_ids == "901")


def _dataset(counts, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    n = len(labels)
    return BeatDataset(rng.standard_normal((n, 360)), labels, np.full(n, "r"), np.arange(n))


class TestBalanceSplit:
    counts = (9000, 800, 700, 300, 2500)

    def test_paper_faithful_totals(self):
        train, test, rep = balance_and_split(_dataset(self.counts), "paper-faithful", seed=1)
        assert len(train) + len(test) == 30000
        assert set(test.class_counts().values()) == {1200}
        assert set(train.class_counts().values()) == {4800}
        assert rep["provenance_overlap"] > 0 and "warning" in rep

    def test_leakage_safe_disjoint(self):
        train, test, rep = balance_and_split(_dataset(self.counts), "leakage-safe", seed=1)
        assert not set(train.provenance()) & set(test.provenance())
        assert rep["provenance_overlap"] == 0
        assert set(train.class_counts().values()) == {4800}
        assert test.class_counts()["NSR"] == 1200
        assert test.class_counts()["APC"] == 60  # 20% of the 300 unique APC beats
        assert len(set(test.provenance())) == len(test)

    @pytest.mark.parametrize("mode", ["paper-faithful", "leakage-safe"])
    def test_deterministic(self, mode):
        a = balance_and_split(_dataset(self.counts), mode, seed=5)
        b = balance_and_split(_dataset(self.counts), mode, seed=5)
        for x, y in zip(a[:2], b[:2]):
            assert x.provenance() == y.provenance()
            assert np.array_equal(x.beats, y.beats)
        assert a[2] == b[2]

    def test_stratified_within_one_beat(self):
        for target in (6000, 500, 777):
            train, test, _ = balance_and_split(_dataset(self.counts), "paper-faithful", 0, target)
            for name in CLASS_NAMES:
                n_tr, n_te = train.class_counts()[name], test.class_counts()[name]
                assert abs(n_te - 0.2 * (n_tr + n_te)) <= 1

    def test_empty_class_rejected(self):
        with pytest.raises(DataError, match="RBBB"):
            balance_and_split(_dataset((10, 10, 0, 10, 10)))

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            balance_and_split(_dataset((5,) * 5), mode="random")


def test_beats_file_round_trip(tmp_path):
    ds = _dataset((3, 1, 2, 1, 4))
    path = tmp_path / "b.beats"
    write_beats(ds, path)
    assert path.read_bytes()[:5] == b"BEAT1"
    back = read_beats(path)
    assert np.array_equal(back.beats, ds.beats.astype(np.float32))
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.provenance() == ds.provenance()
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(DataError, match="truncated"):
        read_beats(path)


def test_report_is_json_serialisable():
    _, _, rep = balance_and_split(_dataset((20,) * 5), target_per_class=10)
    json.dumps(rep)


def test_synthetic_records_quiet(tmp_path):
    write_synthetic_records(tmp_path, ["1"], n_beats=20)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        read_record(tmp_path, "1")
