"""Classification report, confusion matrix and false-classification analysis."""

import csv
import io
import json
import os
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .exceptions import ConfigError, DataError
from .ingest.dataset import CLASS_NAMES

SCHEMA_VERSION = 1
REPORT_FORMATS = ("json", "csv", "text-table")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "classes", "confusion_matrix", "per_class", "accuracy",
                 "macro_avg", "weighted_avg", "false_classifications"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {"type": ["string", "null"]},
        "classes": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "confusion_matrix": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "per_class": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "precision", "recall", "f1", "support"],
                "properties": {
                    "class": {"type": "string"},
                    "precision": {"type": "number", "minimum": 0, "maximum": 1},
                    "recall": {"type": "number", "minimum": 0, "maximum": 1},
                    "f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "support": {"type": "integer", "minimum": 0},
                },
            },
        },
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "macro_avg": {"$ref": "#/$defs/avg"},
        "weighted_avg": {"$ref": "#/$defs/avg"},
        "false_classifications": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "fp", "fp_pct_of_total", "fn", "fn_pct_of_support",
                             "fp_breakdown", "fn_breakdown"],
            },
        },
    },
    "$defs": {
        "avg": {
            "type": "object",
            "required": ["precision", "recall", "f1", "support"],
        }
    },
}


def percent(count, denominator, places=2):
    """``100 * count / denominator`` rounded half-up to ``places`` decimals."""
    if denominator == 0:
        return 0.0
    q = Decimal(100) * Decimal(int(count)) / Decimal(int(denominator))
    return float(q.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


@dataclass
class EvalReport:
    """Metrics derived from a confusion matrix (rows = true class, columns = predicted)."""

    confusion: np.ndarray
    classes: tuple = CLASS_NAMES
    model: str = None

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        k = len(self.classes)
        if self.confusion.shape != (k, k):
            raise ConfigError(f"confusion matrix must be {k}x{k}, got {self.confusion.shape}")
        if self.confusion.sum() == 0:
            raise DataError("cannot evaluate an empty test set")
        self.classes = tuple(self.classes)

    @classmethod
    def from_predictions(cls, y_true, y_pred, classes=CLASS_NAMES, model=None):
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if len(y_true) == 0:
            raise DataError("cannot evaluate an empty test set")
        if y_true.shape != y_pred.shape:
            raise ConfigError("y_true and y_pred must have the same length")
        k = len(classes)
        cm = np.zeros((k, k), dtype=np.int64)
        np.add.at(cm, (y_true, y_pred), 1)
        return cls(cm, classes, model)

    # -- counts ---------------------------------------------------------

    @property
    def total(self):
        return int(self.confusion.sum())

    @property
    def tp(self):
        return np.diag(self.confusion)

    @property
    def support(self):
        return self.confusion.sum(axis=1)

    @property
    def fp(self):
        return self.confusion.sum(axis=0) - self.tp

    @property
    def fn(self):
        return self.support - self.tp

    def fp_breakdown(self, c):
        """True classes of the beats wrongly predicted as ``c``."""
        return {self.classes[t]: int(self.confusion[t, c]) for t in range(len(self.classes)) if t != c}

    def fn_breakdown(self, c):
        """Predicted classes of the class-``c`` beats that were missed."""
        return {self.classes[p]: int(self.confusion[c, p]) for p in range(len(self.classes)) if p != c}

    # -- rates -----------------------------------------------------------

    @property
    def precision(self):
        return np.array([_ratio(t, t + f) for t, f in zip(self.tp, self.fp)])

    @property
    def recall(self):
        return np.array([_ratio(t, t + f) for t, f in zip(self.tp, self.fn)])

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return np.array([_ratio(2 * a * b, a + b) for a, b in zip(p, r)])

    @property
    def accuracy(self):
        return _ratio(np.trace(self.confusion), self.total)

    def _avg(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        return {
            "precision": float(np.dot(w, self.precision)),
            "recall": float(np.dot(w, self.recall)),
            "f1": float(np.dot(w, self.f1)),
            "support": self.total,
        }

    @property
    def macro_avg(self):
        return self._avg(np.ones(len(self.classes)))

    @property
    def weighted_avg(self):
        return self._avg(self.support)

    def false_classifications(self):
        """Per-class FP/FN counts; FP% is over the whole test set, FN% over the class support."""
        rows = []
        for c, name in enumerate(self.classes):
            rows.append({
                "class": name,
                "fp": int(self.fp[c]),
                "fp_pct_of_total": percent(self.fp[c], self.total),
                "fn": int(self.fn[c]),
                "fn_pct_of_support": percent(self.fn[c], self.support[c]),
                "fp_breakdown": self.fp_breakdown(c),
                "fn_breakdown": self.fn_breakdown(c),
            })
        return rows

    # -- serialisation ---------------------------------------------------

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "classes": list(self.classes),
            "confusion_matrix": self.confusion.tolist(),
            "per_class": [
                {"class": n, "precision": float(p), "recall": float(r), "f1": float(f), "support": int(s)}
                for n, p, r, f, s in zip(self.classes, self.precision, self.recall, self.f1, self.support)
            ],
            "accuracy": self.accuracy,
            "macro_avg": self.macro_avg,
            "weighted_avg": self.weighted_avg,
            "false_classifications": self.false_classifications(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported report schema version {d.get('schema_version')!r}")
        return cls(np.array(d["confusion_matrix"]), tuple(d["classes"]), d.get("model"))

    def __eq__(self, other):
        return (isinstance(other, EvalReport) and self.classes == other.classes
                and self.model == other.model and np.array_equal(self.confusion, other.confusion))


def evaluate(model, beats, labels, name=None):
    """Predict ``beats`` with ``model`` and build an :class:`EvalReport`."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("cannot evaluate an empty test set")
    pred = model.predict_proba(beats).argmax(axis=1)
    if name is None and hasattr(model, "spec"):
        name = model.spec.variant
    return EvalReport.from_predictions(labels, pred, model=name)


# -- rendering -------------------------------------------------------------


def to_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "f1", "support"])
    d = report.to_dict()
    for row in d["per_class"]:
        w.writerow([row["class"], f"{row['precision']:.4f}", f"{row['recall']:.4f}", f"{row['f1']:.4f}", row["support"]])
    w.writerow(["accuracy", "", "", f"{report.accuracy:.4f}", report.total])
    for key, label in (("macro_avg", "macro avg"), ("weighted_avg", "weighted avg")):
        a = d[key]
        w.writerow([label, f"{a['precision']:.4f}", f"{a['recall']:.4f}", f"{a['f1']:.4f}", a["support"]])
    return buf.getvalue()


def to_text(report):
    d = report.to_dict()
    width = max(12, max(len(c) for c in report.classes) + 2)
    lines = []
    title = f"Classification report ({report.model})" if report.model else "Classification report"
    lines += [title, ""]
    lines.append(f"{'':<{width}}{'precision':>10}{'recall':>10}{'f1-score':>10}{'support':>10}")
    for row in d["per_class"]:
        lines.append(f"{row['class']:<{width}}{row['precision']:>10.2f}{row['recall']:>10.2f}"
                     f"{row['f1']:>10.2f}{row['support']:>10d}")
    lines.append("")
    lines.append(f"{'accuracy':<{width}}{'':>10}{'':>10}{report.accuracy:>10.2f}{report.total:>10d}")
    for key, label in (("macro_avg", "macro avg"), ("weighted_avg", "weighted avg")):
        a = d[key]
        lines.append(f"{label:<{width}}{a['precision']:>10.2f}{a['recall']:>10.2f}{a['f1']:>10.2f}{a['support']:>10d}")

    lines += ["", "Confusion matrix (rows: true, columns: predicted)", ""]
    lines.append(f"{'':<{width}}" + "".join(f"{c:>8}" for c in report.classes))
    for name, row in zip(report.classes, report.confusion):
        lines.append(f"{name:<{width}}" + "".join(f"{v:>8d}" for v in row))

    lines += ["", "False classifications", ""]
    lines.append(f"{'class':<{width}}{'FP':>6}{'FP % of total':>15}{'FN':>6}{'FN % of support':>17}")
    for row in d["false_classifications"]:
        lines.append(f"{row['class']:<{width}}{row['fp']:>6d}{row['fp_pct_of_total']:>15.2f}"
                     f"{row['fn']:>6d}{row['fn_pct_of_support']:>17.2f}")
    lines.append("")
    for row in d["false_classifications"]:
        fp = ", ".join(f"{k} {v}" for k, v in row["fp_breakdown"].items() if v) or "none"
        fn = ", ".join(f"{k} {v}" for k, v in row["fn_breakdown"].items() if v) or "none"
        lines.append(f"{row['class']}: FP from [{fp}]; FN to [{fn}]")
    return "\n".join(lines) + "\n"


_RENDERERS = {"json": (to_json, ".json"), "csv": (to_csv, ".csv"), "text-table": (to_text, ".txt")}


def emit_report(report, fmt, path):
    """Write ``report`` as json, csv or text-table to ``path``; returns the path."""
    if fmt not in _RENDERERS:
        raise ConfigError(f"report format must be one of {REPORT_FORMATS}, got {fmt!r}")
    render, _ = _RENDERERS[fmt]
    text = render(report)
    parent = os.path.dirname(os.fspath(path)) or "."
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise DataError(f"cannot write report to {path}: directory is not writable")
    with open(path, "w", newline="") as f:
        f.write(text)
    return path


def emit_all(report, out_dir, stem="report"):
    return {fmt: emit_report(report, fmt, os.path.join(out_dir, stem + ext))
            for fmt, (_, ext) in _RENDERERS.items()}


def load_report(path):
    with open(path) as f:
        return EvalReport.from_dict(json.load(f))
