import numpy as np
import pytest

from arrhythminet.ingest.synthetic import write_synthetic_records
from arrhythminet.pipeline import build_dataset


@pytest.fixture(scope="session")
def synthetic_data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic_wfdb")
    write_synthetic_records(d, ["101", "102", "103", "104", "105"], n_beats=800, seed=0)
    return d


@pytest.fixture(scope="session")
def synthetic_beats(synthetic_data_dir):
    """Denoised, z-scored beats from the synthetic records."""
    ds, _ = build_dataset(synthetic_data_dir)
    return ds


@pytest.fixture(scope="session")
def overfit_set(synthetic_beats):
    """50 beats, 10 per class."""
    idx = np.concatenate([np.flatnonzero(synthetic_beats.labels == c)[:10] for c in range(5)])
    return synthetic_beats.subset(idx)


# -- acceptance summary ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            item.user_properties.append(("criterion", mark.args))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n, title = props["criterion"]
    entry = _criteria.setdefault(n, {"title": title, "failed": [], "ran": 0})
    if report.when == "call" or report.outcome != "passed":
        entry["ran"] += report.when == "call"
        if report.outcome != "passed":
            entry["failed"].append(report.nodeid.split("::")[-1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "FAIL" if e["failed"] else "PASS"
        extra = f"  ({', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"[{status}] criterion {n}: {e['title']}{extra}")
