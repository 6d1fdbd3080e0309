"""Command-line entry point: preprocess, train, evaluate, explain, inspect.

Settings resolve as CLI flags > ARRHYTHMINET_DATA_DIR (data directory only)
> ``--config`` JSON file > built-in defaults. Every subcommand that writes
files also writes ``run-manifest.json`` holding the effective settings and
the SHA-256 of its inputs and outputs.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .exceptions import ConfigError, DataError, NumericError
from .ingest.dataset import CLASS_NAMES, balance_and_split, read_beats, write_beats
from .metrics import emit_all, evaluate
from .models import ArrhythmiNet, cost_report, count_macs, count_params, make_spec
from .nn.optim import OptimizerConfig
from .pipeline import PreprocessConfig, build_dataset
from .serialization import deserialize, serialize, size_report, to_bytes
from .training import TrainConfig, train
from .xai import MAX_EXACT_SEGMENTS, export_attribution, grad_cam, shap_exact, shap_sampled

log = logging.getLogger("arrhythminet")

DATA_DIR_ENV = "ARRHYTHMINET_DATA_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULTS = {
    "common": {"seed": 0, "threads": 1},
    "preprocess": {
        "data_dir": None, "records": None, "out": None, "split_mode": "leakage-safe",
        "target_per_class": 6000, "test_fraction": 0.2, "wavelet_levels": 4, "threshold": None,
        "denoise": True, "normalize": True,
    },
    "train": {
        "dataset": None, "out": None, "variant": "v1", "epochs": 30, "batches_per_epoch": 500,
        "batch_size": 48, "optimizer": "adam", "learning_rate": 1e-3,
    },
    "evaluate": {"model": None, "dataset": None, "out": None, "split": "test", "variant": None},
    "explain": {
        "model": None, "dataset": None, "out": None, "split": "test", "index": None, "beat_class": None,
        "target": None, "method": "all", "mode": "exact", "segments": 12, "draws": 1000,
        "baseline": "mean", "formats": "csv,json,svg",
    },
    "inspect": {"variant": "v1", "input_length": 360, "json": False, "out": None},
}
REQUIRED = {
    "preprocess": ("data_dir", "out"),
    "train": ("dataset", "out"),
    "evaluate": ("model", "dataset", "out"),
    "explain": ("model", "dataset", "out"),
    "inspect": (),
}


# -- helpers -------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def write_manifest(out_dir, command, config, inputs=(), outputs=(), extra=None):
    manifest = {
        "tool": "arrhythminet",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {os.path.basename(p): sha256_file(p) for p in inputs},
        "outputs": {os.path.basename(p): sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    write_json(os.path.join(out_dir, "run-manifest.json"), manifest)
    return manifest


def load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def resolve(command, args, file_cfg, environ=os.environ):
    """Merge defaults, config file, environment and flags into one flat dict."""
    known = {**DEFAULTS["common"], **DEFAULTS[command]}
    cfg = dict(known)
    sections = set(DEFAULTS) - {"common"}
    for key, value in file_cfg.items():
        if key in sections:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        cfg[key] = value
    for key, value in (file_cfg.get(command) or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {command}.{key}")
        cfg[key] = value
    if "data_dir" in known and environ.get(DATA_DIR_ENV):
        cfg["data_dir"] = environ[DATA_DIR_ENV]
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, "")]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        hint = f" (or set {DATA_DIR_ENV})" if "data_dir" in missing else ""
        raise ConfigError(f"{command}: missing required setting(s) {flags}{hint}")
    if int(cfg["threads"]) < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def _ensure_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _thread_limit(n):
    return threadpool_limits(limits=int(n))


def _load_split(dataset_dir, split):
    path = os.path.join(dataset_dir, f"{split}.beats")
    if not os.path.exists(path):
        raise DataError(f"dataset file {path} not found (run 'arrhythminet preprocess' first)")
    return read_beats(path), path


# -- subcommands ---------------------------------------------------------------


def cmd_preprocess(cfg):
    out = _ensure_out(cfg["out"])
    records = cfg["records"]
    if isinstance(records, str):
        records = [r.strip() for r in records.split(",") if r.strip()]
    pcfg = PreprocessConfig(wavelet_levels=int(cfg["wavelet_levels"]), threshold=cfg["threshold"],
                            denoise=bool(cfg["denoise"]), normalize=bool(cfg["normalize"]))
    dataset, stats = build_dataset(cfg["data_dir"], records, pcfg, threads=int(cfg["threads"]))
    train_set, test_set, split = balance_and_split(
        dataset, cfg["split_mode"], int(cfg["seed"]), int(cfg["target_per_class"]), float(cfg["test_fraction"])
    )
    if "warning" in split:
        log.warning(split["warning"])
    paths = [os.path.join(out, "train.beats"), os.path.join(out, "test.beats")]
    write_beats(train_set, paths[0])
    write_beats(test_set, paths[1])
    manifest = {
        "records": [s.record_id for s in stats],
        "seed": int(cfg["seed"]),
        "mode": cfg["split_mode"],
        "segmented": dataset.class_counts(),
        "skipped_boundary": sum(s.skipped_boundary for s in stats),
        "per_record": [s.to_dict() for s in stats],
        "split": split,
        "train": train_set.class_counts(),
        "test": test_set.class_counts(),
        "preprocess": pcfg.to_dict(),
    }
    mpath = os.path.join(out, "dataset-manifest.json")
    write_json(mpath, manifest)
    write_manifest(out, "preprocess", cfg, outputs=paths + [mpath])
    print(f"segmented {len(dataset)} beats from {len(stats)} record(s): {dataset.class_counts()}")
    print(f"train {len(train_set)} / test {len(test_set)} ({cfg['split_mode']}); wrote {out}")
    return EXIT_OK


def _cost_summary(spec):
    report = cost_report(spec)
    d = report.to_dict()
    d["blocks"] = spec.n_blocks
    d["channel_plan"] = spec.channel_plan
    d["spec_hash"] = spec.spec_hash
    d["count_params"] = count_params(spec).total_params
    d["count_macs"] = count_macs(spec).total_macs
    return report, d


def cmd_train(cfg):
    out = _ensure_out(cfg["out"])
    train_set, train_path = _load_split(cfg["dataset"], "train")
    spec = make_spec(cfg["variant"])
    if train_set.beats.shape[1] != spec.input_length:
        raise ConfigError(
            f"variant {cfg['variant']} expects {spec.input_length}-sample beats, "
            f"dataset has {train_set.beats.shape[1]}"
        )
    model = ArrhythmiNet(spec, seed=int(cfg["seed"]))
    tcfg = TrainConfig(
        epochs=int(cfg["epochs"]), batches_per_epoch=int(cfg["batches_per_epoch"]),
        batch_size=int(cfg["batch_size"]),
        optimizer=OptimizerConfig(name=cfg["optimizer"], learning_rate=float(cfg["learning_rate"])),
        seed=int(cfg["seed"]), variant=cfg["variant"],
    )
    _, history = train(model, train_set.beats, train_set.labels, tcfg)
    model_path = os.path.join(out, "model.anet")
    serialize(model, model_path)
    hist_path = os.path.join(out, "history.csv")
    history.write_csv(hist_path)
    report, cost = _cost_summary(spec)
    cost["file"] = size_report(model, model_path)
    cost_path = os.path.join(out, "cost-report.json")
    write_json(cost_path, cost)
    with open(os.path.join(out, "cost-report.txt"), "w") as f:
        f.write(report.format_table() + "\n")
    # history.csv carries wall time, so it is listed but not hashed
    write_manifest(out, "train", cfg, inputs=[train_path], outputs=[model_path, cost_path],
                   extra={"history": "history.csv", "spec_hash": spec.spec_hash})
    last = history.epochs[-1]
    print(f"trained {cfg['variant']} for {tcfg.epochs} epoch(s): loss {last.loss:.4f}, acc {last.accuracy:.4f}")
    print(f"model {model_path} ({cost['file']['kb']:.2f} KB), {cost['totals']['params']} params")
    return EXIT_OK


def _load_model(path, variant=None):
    if not os.path.exists(path):
        raise DataError(f"model file {path} not found")
    expected = make_spec(variant).spec_hash if variant else None
    return deserialize(path, expected_spec_hash=expected)


def cmd_evaluate(cfg):
    out = _ensure_out(cfg["out"])
    model = _load_model(cfg["model"], cfg["variant"])
    test_set, test_path = _load_split(cfg["dataset"], cfg["split"])
    report = evaluate(model, test_set.beats, test_set.labels, name=model.spec.variant)
    files = emit_all(report, out)
    write_manifest(out, "evaluate", cfg, inputs=[cfg["model"], test_path], outputs=list(files.values()),
                   extra={"spec_hash": model.spec.spec_hash})
    with open(files["text-table"]) as f:
        sys.stdout.write(f.read())
    return EXIT_OK


def _select_beat(cfg, data):
    if cfg["index"] is not None:
        i = int(cfg["index"])
        if not 0 <= i < len(data):
            raise ConfigError(f"beat index {i} out of range: {cfg['split']} split has {len(data)} beats")
        return i
    if cfg["beat_class"] is not None:
        name = str(cfg["beat_class"]).upper()
        if name not in CLASS_NAMES:
            raise ConfigError(f"unknown class {cfg['beat_class']!r}; expected one of {CLASS_NAMES}")
        hits = np.flatnonzero(data.labels == CLASS_NAMES.index(name))
        if not len(hits):
            raise DataError(f"no {name} beats in the {cfg['split']} split")
        return int(hits[0])
    return 0


def cmd_explain(cfg):
    method, mode = cfg["method"], cfg["mode"]
    segments = int(cfg["segments"])
    if method in ("shap", "all") and mode == "exact" and segments > MAX_EXACT_SEGMENTS:
        raise ConfigError(
            f"--segments {segments} is too many for exact Shapley enumeration (limit {MAX_EXACT_SEGMENTS}); "
            "use --mode sampled --draws N instead"
        )
    formats = [f.strip() for f in str(cfg["formats"]).split(",") if f.strip()]
    out = _ensure_out(cfg["out"])
    model = _load_model(cfg["model"])
    data, data_path = _load_split(cfg["dataset"], cfg["split"])
    i = _select_beat(cfg, data)
    beat = data.beats[i].astype(np.float64)
    target = cfg["target"]
    if target is None:
        target = int(model.predict_proba(beat[None, :])[0].argmax())
    elif isinstance(target, str) and not target.isdigit():
        if target.upper() not in CLASS_NAMES:
            raise ConfigError(f"unknown target class {target!r}")
        target = CLASS_NAMES.index(target.upper())
    target = int(target)

    mean_beat = None
    inputs = [cfg["model"], data_path]
    if cfg["baseline"] == "mean" and method in ("shap", "all"):
        train_set, train_path = _load_split(cfg["dataset"], "train")
        mean_beat = train_set.beats.astype(np.float64).mean(axis=0)
        inputs.append(train_path)

    attrs = []
    if method in ("gradcam", "all"):
        attrs.append(("gradcam", grad_cam(model, beat, target)))
    if method in ("shap", "all"):
        if mode == "exact":
            attrs.append(("shap-exact", shap_exact(model, beat, target, segments, cfg["baseline"], mean_beat)))
        else:
            attrs.append(("shap-sampled", shap_sampled(model, beat, target, segments, int(cfg["draws"]),
                                                       int(cfg["seed"]), cfg["baseline"], mean_beat)))
    if not attrs:
        raise ConfigError(f"unknown method {method!r}")
    outputs = []
    for name, attr in attrs:
        attr.meta.update({"beat_index": i, "split": cfg["split"], "true_class": CLASS_NAMES[data.labels[i]]})
        for fmt in formats:
            path = os.path.join(out, f"{name}-beat{i}.{fmt}")
            export_attribution(attr, beat, fmt, path)
            outputs.append(path)
    write_manifest(out, "explain", cfg, inputs=inputs, outputs=outputs,
                   extra={"beat_index": i, "target": target})
    print(f"explained beat {i} ({CLASS_NAMES[data.labels[i]]}) for class {CLASS_NAMES[target]}: "
          + ", ".join(os.path.basename(p) for p in outputs))
    return EXIT_OK


def cmd_inspect(cfg):
    spec = make_spec(cfg["variant"])
    report, summary = _cost_summary(spec)
    if int(cfg["input_length"]) != spec.input_length:
        report = cost_report(spec, input_length=int(cfg["input_length"]))
        summary["totals"] = report.to_dict()["totals"]
    summary["file_bytes"] = len(to_bytes(ArrhythmiNet(spec, seed=0)))
    summary["file_kb"] = round(summary["file_bytes"] / 1024, 2)
    if cfg["json"]:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(report.format_table())
        print(f"blocks {spec.n_blocks}; channel plan {spec.channel_plan}; "
              f"serialized model {summary['file_kb']:.2f} KB")
    if cfg["out"]:
        out = _ensure_out(cfg["out"])
        path = os.path.join(out, "cost-report.json")
        write_json(path, summary)
        write_manifest(out, "inspect", cfg, outputs=[path])
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "inspect": cmd_inspect,
}


# -- argument parsing ----------------------------------------------------------


def _bool_pair(p, name, help_on, help_off):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action="store_const", const=True, help=help_on)
    p.add_argument(f"--no-{name}", dest=name.replace("-", "_"), action="store_const", const=False, help=help_off)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="BLAS / ingest threads; 1 is bit-reproducible (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="arrhythminet", description="ECG beat classification toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="denoise, segment, balance and split WFDB records")
    p.add_argument("--data-dir", help=f"directory with .hea/.dat/.atr files (env {DATA_DIR_ENV})")
    p.add_argument("--records", help="comma-separated record ids (default: all in data dir)")
    p.add_argument("--out")
    p.add_argument("--split-mode", choices=["leakage-safe", "paper-faithful"])
    p.add_argument("--target-per-class", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--wavelet-levels", type=int)
    p.add_argument("--threshold", type=float, help="fixed soft threshold (default: universal threshold)")
    _bool_pair(p, "denoise", "wavelet-denoise records (default)", "skip denoising")
    _bool_pair(p, "normalize", "z-score each beat (default)", "keep physical units")

    p = sub.add_parser("train", parents=[common], help="train a model on a preprocessed dataset")
    p.add_argument("--dataset", help="output directory of 'preprocess'")
    p.add_argument("--out")
    p.add_argument("--variant", choices=["v1", "v2"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="classification report for a trained model")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--variant", choices=["v1", "v2"], help="require the model to match this default spec")

    p = sub.add_parser("explain", parents=[common], help="Grad-CAM and Shapley attributions for a beat")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--split", choices=["train", "test"])
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--index", type=int, help="beat index within the split")
    sel.add_argument("--class", dest="beat_class", help="explain the first beat of this class")
    p.add_argument("--target", help="class to explain (default: predicted class)")
    p.add_argument("--method", choices=["gradcam", "shap", "all"])
    p.add_argument("--mode", choices=["exact", "sampled"])
    p.add_argument("--segments", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--baseline", choices=["mean", "zeros"])
    p.add_argument("--formats", help="comma-separated subset of csv,json,svg")

    p = sub.add_parser("inspect", parents=[common], help="print the cost report of a variant")
    p.add_argument("--variant", choices=["v1", "v2"])
    p.add_argument("--input-length", type=int)
    p.add_argument("--json", action="store_const", const=True)
    p.add_argument("--out")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args, load_config_file(args.config))
        with _thread_limit(cfg["threads"]):
            return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"arrhythminet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"arrhythminet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"arrhythminet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
