"""``murmurkit`` command line: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``MURMURKIT_LOG`` to error, warn, info or debug to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import read_wav
from .dataset import (
    LabeledDataset,
    load_feature_store,
    load_manifest,
    save_feature_store,
    smote_balance,
    stratified_kfold,
)
from .errors import BadModelFile, ConfigError, MurmurkitError
from .funnelcnn import FNET_MAGIC, ModelConfig, layer_table, load_model, predict_proba, save_model
from .pipeline import PipelineConfig, file_features, signal_features
from .quantkit import (
    FNQ8_MAGIC,
    bench,
    calibrate,
    load_qmodel,
    predict_proba_q,
    quantize,
    save_qmodel,
)
from .trainer import (
    confusion_csv,
    confusion_matrix,
    default_positive_class,
    metrics_from_confusion,
    train_cv,
)

log = logging.getLogger("murmurkit")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

MAX_FAILED_FRACTION = 0.10

# Published reference points, echoed for comparison only.
REFERENCE_VARIANTS = (
    {"params": 4145, "flops": 8.6e6, "model_size": "13 kB", "tpis_ms": [78, 91]},
    {"params": 5453, "flops": 11.4e6, "model_size": "14 kB", "tpis_ms": [79, 99]},
)
REFERENCE_TPIS_RANGE_MS = (78, 99)
REFERENCE_SIZE_RANGE_KB = (13, 14)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("MURMURKIT_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("murmurkit").setLevel(level)


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "k", None) is not None:
        if args.k < 2:
            raise ConfigError("--k must be >= 2")
        cfg = replace(cfg, k=args.k)
    return cfg


def _load_any_model(path):
    """``("float", FunnelModel)`` or ``("int8", QuantizedModel)`` by file magic."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise BadModelFile(f"cannot read model {path}: {exc}") from exc
    if magic == FNET_MAGIC:
        return "float", load_model(path)
    if magic == FNQ8_MAGIC:
        return "int8", load_qmodel(path)
    raise BadModelFile(f"{path} is neither an FNET nor an FNQ8 file")


def _proba(kind, model, x) -> np.ndarray:
    return predict_proba(model, x) if kind == "float" else predict_proba_q(model, x)


def _class_names(cfg: ModelConfig, fallback=()) -> tuple:
    if cfg.class_names:
        return cfg.class_names
    if fallback and len(fallback) == cfg.num_classes:
        return tuple(fallback)
    return tuple(f"class_{i}" for i in range(cfg.num_classes))


# -- preprocess ------------------------------------------------------------------

def _file_job(job):
    path, cfg = job
    try:
        return file_features(path, cfg), None
    except (MurmurkitError, OSError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(e.path, cfg) for e in manifest.entries]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_file_job, jobs))
    else:
        results = [_file_job(j) for j in jobs]

    rows, labels, errors, per_file = [], [], [], []
    for entry, (feats, err) in zip(manifest.entries, results):
        name = entry.path.name
        if err is not None:
            errors.append(f"{entry.path}\t{err}")
            log.warning("skipping %s: %s", entry.path, err)
            per_file.append({"file": name, "label": manifest.class_names[entry.label], "segments": 0,
                             "error": err})
            continue
        if feats.shape[0] == 0:
            log.info("%s is shorter than half a segment; no rows", entry.path)
        rows.append(feats)
        labels += [entry.label] * feats.shape[0]
        per_file.append({"file": name, "label": manifest.class_names[entry.label],
                         "segments": int(feats.shape[0])})
    (out / "errors.log").write_text("".join(e + "\n" for e in errors), encoding="utf-8")

    d = cfg.input_shape[0] * cfg.input_shape[1]
    features = np.concatenate(rows) if rows else np.empty((0, d))
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=len(manifest.class_names))
    summary = {
        "files": len(manifest),
        "failed_files": len(errors),
        "rows": int(labels.size),
        "feature_dim": d,
        "class_names": list(manifest.class_names),
        "class_counts": {n: int(c) for n, c in zip(manifest.class_names, counts)},
        "per_file": per_file,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if len(errors) > MAX_FAILED_FRACTION * len(manifest):
        log.error("%d of %d files failed", len(errors), len(manifest))
        return EXIT_RUNTIME
    ds = LabeledDataset(features, labels, manifest.class_names)
    save_feature_store(out / "features.fstr", ds)
    log.info("wrote %d rows to %s", len(ds), out / "features.fstr")
    return EXIT_OK


# -- train / eval ----------------------------------------------------------------

def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = load_feature_store(args.features)
    balanced = smote_balance(ds, cfg.smote)
    plan = stratified_kfold(balanced, cfg.k, cfg.cv_seed)
    mcfg = cfg.model_config(ds.n_classes, ds.class_names)
    report = train_cv(balanced, plan, mcfg, cfg.train)
    out = Path(args.out)
    save_model(out, report.models[report.best_fold])
    _sidecar(out, ".report.json").write_text(report.to_json(), encoding="utf-8")
    _sidecar(out, ".confusion.csv").write_text(confusion_csv(report.metrics.confusion, ds.class_names),
                                               encoding="utf-8")
    m = report.metrics
    log.info("mean accuracy %.2f%%, sensitivity %.2f%%, specificity %.2f%%",
             m.accuracy, m.sensitivity, m.specificity)
    sys.stdout.write(json.dumps({"accuracy": m.accuracy, "sensitivity": m.sensitivity,
                                 "specificity": m.specificity, "best_fold": report.best_fold,
                                 "model": str(out)}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    kind, model = _load_any_model(args.model)
    ds = load_feature_store(args.features)
    cfg = model.cfg
    if ds.features.shape[1] != int(np.prod(cfg.input_shape)):
        raise ConfigError(f"feature dimension {ds.features.shape[1]} does not fit input {cfg.input_shape}")
    x = ds.features.reshape((len(ds),) + cfg.input_shape)
    p = _proba(kind, model, x)
    pred = (p[:, 1] >= 0.5).astype(np.int64) if cfg.num_classes == 2 else np.argmax(p, axis=1)
    cm = confusion_matrix(ds.labels, pred, cfg.num_classes)
    rep = metrics_from_confusion(cm, default_positive_class(ds.class_names))
    _emit({"model": kind, "samples": len(ds), "class_names": list(ds.class_names), **rep.to_dict()}, args.out)
    return EXIT_OK


# -- export / infer / bench --------------------------------------------------------

def cmd_export(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    ds = load_feature_store(args.features)
    n = min(cfg.calibration_samples, len(ds))
    rng = np.random.default_rng(cfg.cv_seed)
    idx = np.sort(rng.choice(len(ds), size=n, replace=False))
    rep = ds.features[idx].reshape((n,) + model.cfg.input_shape)
    qm = quantize(model, calibrate(model, rep))
    size = save_qmodel(args.out, qm)
    sys.stdout.write(json.dumps({"calibration_samples": int(n), "model_size_bytes": size,
                                 "out": str(args.out)}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args)
    kind, model = _load_any_model(args.model)
    mcfg = model.cfg
    if tuple(cfg.input_shape) != tuple(mcfg.input_shape[:2]):
        raise ConfigError(f"config input shape {cfg.input_shape} differs from the model's {mcfg.input_shape}")
    sig, _ = read_wav(args.wav)
    feats = signal_features(sig, cfg)
    if feats.shape[0] == 0:
        raise MurmurkitError(f"{args.wav} yields no segments")
    p = _proba(kind, model, feats.reshape((-1,) + mcfg.input_shape))
    names = _class_names(mcfg)
    mean = p.mean(axis=0)
    top = int(np.argmax(mean)) if mcfg.num_classes > 2 else int(mean[1] >= 0.5)
    result = {
        "file": Path(args.wav).name,
        "model": kind,
        "class": names[top],
        "probability": float(mean[top]),
        "probabilities": {n: float(v) for n, v in zip(names, mean)},
        "segments": [
            {"index": i, "class": names[int(np.argmax(row))], "probabilities": {n: float(v) for n, v in zip(names, row)}}
            for i, row in enumerate(p)
        ],
    }
    _emit(result, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    kind, qm = _load_any_model(args.model)
    if kind != "int8":
        raise BadModelFile(f"{args.model} is not an FNQ8 file; run export first")
    runs = args.runs
    if runs is None:
        runs = PipelineConfig.load(args.config).bench_runs
    if runs < 10:
        raise ConfigError(f"--runs must be >= 10, got {runs}")
    seed = 0 if args.seed is None else args.seed
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, qm.cfg.input_shape)
    stats = bench(qm, x, runs=runs, model_size_bytes=Path(args.model).stat().st_size)
    out = stats.to_dict()
    out["reference"] = {
        "note": "published on-device values, not comparable with host timings",
        "tpis_ms_range": list(REFERENCE_TPIS_RANGE_MS),
        "model_size_kb_range": list(REFERENCE_SIZE_RANGE_KB),
    }
    _emit(out, args.out)
    return EXIT_OK


def _format_table(rows) -> str:
    lines = [f"{'layer':<20}{'kind':<11}{'output':<16}{'params':>8}{'flops':>12}"]
    for r in rows:
        shape = "x".join(str(v) for v in r["out_shape"])
        lines.append(f"{r['name']:<20}{r['kind']:<11}{shape:<16}{r['params']:>8}{r['flops']:>12}")
    lines.append(f"{'total':<47}{sum(r['params'] for r in rows):>8}{sum(r['flops'] for r in rows):>12}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    if args.model:
        _, model = _load_any_model(args.model)
        mcfg = model.cfg
    else:
        cfg = _config(args)
        mcfg = cfg.model_config(args.classes)
    rows = layer_table(mcfg)
    lines = [_format_table(rows), "", "published reference points:"]
    for v in REFERENCE_VARIANTS:
        lines.append(f"  params {v['params']:>5}  flops {v['flops'] / 1e6:.1f}M  size {v['model_size']}"
                     f"  tpis {v['tpis_ms'][0]}-{v['tpis_ms'][1]} ms")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="murmurkit", description="Heart-sound murmur detection toolkit.")
    ap.add_argument("--version", action="version", version=f"murmurkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="pipeline INI file (default: bundled preset)")
        if seed:
            p.add_argument("--seed", type=int, help="seed for SMOTE, folds, training and sampling")
        return p

    p = common(sub.add_parser("preprocess", help="WAV manifest -> feature store"))
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_preprocess)

    p = common(sub.add_parser("train", help="SMOTE + stratified k-fold training"))
    p.add_argument("features")
    p.add_argument("--out", required=True, help="float model file to write")
    p.add_argument("--k", type=int, help="number of folds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a model on a feature store")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("--out", help="also write the JSON here")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("export", help="int8 post-training quantization"))
    p.add_argument("model")
    p.add_argument("features", help="feature store used for calibration")
    p.add_argument("--out", required=True, help="FNQ8 file to write")
    p.set_defaults(func=cmd_export)

    p = common(sub.add_parser("infer", help="predict one WAV"), seed=False)
    p.add_argument("model")
    p.add_argument("wav")
    p.add_argument("--out", help="also write the JSON here")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("bench", help="host latency of a quantized model"))
    p.add_argument("model")
    p.add_argument("--runs", type=int, help="timed forwards (>= 10, default from config)")
    p.add_argument("--out", help="also write the JSON here")
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("inspect", help="parameter/FLOP table"), seed=False)
    p.add_argument("model", nargs="?", help="FNET/FNQ8 file (default: config preset)")
    p.add_argument("--classes", type=int, default=2, help="classes for the config preset")
    p.add_argument("--out", help="also write the table here")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        log.error("--jobs must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (MurmurkitError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
