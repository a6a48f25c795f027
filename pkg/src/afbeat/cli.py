"""``afbeat`` command line: the pipeline as subcommands sharing one config.

Every module error ends the process with a nonzero status and one JSON line
on stderr: ``{"error": "<kind>", "message": "..."}``. Usage errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from afbeat import __version__
from afbeat.config import PipelineConfig, load_config
from afbeat.io_formats import (
    WEIGHTS_VERSION, Beat, BeatArchive, FormatError, RiskSeries, load_beat_archive, load_probs,
    load_record_bundle, load_weights, save_beat_archive, save_probs, save_record_bundle, save_weights,
    weights_checksum, write_report,
)

log = logging.getLogger("afbeat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse calls this for bad flags
        raise UsageError(message)


# -- helpers ------------------------------------------------------------------

def _out(args, path) -> Path:
    """Resolve an output path under ``--out-dir`` (absolute paths pass through)."""
    p = Path(path)
    if args.out_dir is not None and not p.is_absolute():
        p = Path(args.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args, flag_map: dict[str, str]) -> PipelineConfig:
    """Config file layered under the flags named in ``flag_map`` (attr -> section.key)."""
    overrides = {}
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    return load_config(args.config, overrides)


def _expand(paths, suffix: str) -> list[Path]:
    """Files given directly, plus ``*suffix`` files inside given directories (sorted)."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{suffix}")))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    return out


def _read_labels(path) -> dict[str, int]:
    """``record_id,label`` CSV (a header row is optional)."""
    labels = {}
    for row in csv.reader(io.StringIO(Path(path).read_text(encoding="utf-8"))):
        if not row or row[0].startswith("#") or row[0].strip() == "record_id":
            continue
        if len(row) != 2 or row[1].strip() not in ("0", "1"):
            raise FormatError(f"{Path(path).name}: bad label row {row!r}")
        labels[row[0].strip()] = int(row[1])
    return labels


def _series_labels(series: dict[str, RiskSeries], labels_path) -> dict[str, int]:
    labels = _read_labels(labels_path) if labels_path else {}
    out = {}
    for rid, s in series.items():
        lab = labels.get(rid, s.label)
        if lab is None:
            raise ValueError(f"no label for record {rid!r} (add '# label=' or pass --labels)")
        out[rid] = int(lab)
    return out


def _load_series(paths) -> dict[str, RiskSeries]:
    series = {}
    for p in _expand(paths, ".probs"):
        s = load_probs(p)
        if s.record_id in series:
            raise ValueError(f"duplicate record_id {s.record_id!r} in {p.name}")
        series[s.record_id] = s
    return series


# -- subcommands ----------------------------------------------------------------

def cmd_preprocess(args) -> None:
    from afbeat.preprocess import filter_bundle
    cfg = _config(args, {"low": "filter.low_hz", "high": "filter.high_hz", "order": "filter.order"})
    bundle = load_record_bundle(args.inp)
    save_record_bundle(_out(args, args.out), filter_bundle(bundle, cfg.filter), payload=args.payload)


def _keep(text: str):
    return None if text == "all" else tuple(t.strip() for t in text.split(","))


def cmd_segment(args) -> None:
    from afbeat.segmentation import extract_archive
    cfg = _config(args, {"length": "segment.length", "skip_head": "segment.skip_head",
                         "skip_tail": "segment.skip_tail", "keep": "segment.keep"})
    seg = cfg.segment
    archive = extract_archive(load_record_bundle(args.inp), seg.length, seg.skip_head, seg.skip_tail,
                              _keep(seg.keep))
    save_beat_archive(_out(args, args.out), archive)


def _prepare(path: Path, cfg: PipelineConfig) -> BeatArchive:
    if path.suffix == ".beats":
        return load_beat_archive(path)
    from afbeat.trainer import PipelineParams, prepare_archive
    seg = cfg.segment
    return prepare_archive(load_record_bundle(path),
                           PipelineParams(cfg.filter, seg.length, seg.skip_head, seg.skip_tail))


def cmd_train(args) -> None:
    from afbeat.net1d.model import count_parameters
    from afbeat.trainer import archives_by_patient, cross_validate_archives, train
    cfg = _config(args, {"epochs": "train.epochs", "lr": "train.learning_rate", "batch": "train.batch_size",
                         "optimizer": "train.optimizer"})
    files = _expand([args.data], ".beats")
    if not files:
        files = _expand([args.data], ".ecgb")
    if not files:
        raise FileNotFoundError(f"no .beats or .ecgb files in {args.data}")
    # record-level work is independent; map() keeps the input order
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        archives = list(pool.map(lambda p: _prepare(p, cfg), files))
    skipped = [a.record_id for a in archives if not a.beats]
    archives = [a for a in archives if a.beats]
    if not archives:
        raise ValueError("no beats to train on")
    model_cfg = cfg.model
    if model_cfg.beat_length != archives[0].L:
        model_cfg = dataclasses.replace(model_cfg, beat_length=archives[0].L)
    labels = {p: int(arcs[0].labels[0]) for p, arcs in archives_by_patient(archives).items()}

    report = {"pipeline": {k: v for k, v in _config_dict(cfg).items()}, "skipped_empty_records": skipped,
              "patients": len(labels), "cross_validation": None}
    if args.folds >= 2:
        cv = cross_validate_archives(archives, labels, args.folds, cfg.train, model_cfg, cfg.fusion.threshold)
        report["cross_validation"] = cv.to_dict()
        probs_dir = _out(args, Path(args.probs_dir) / "x").parent
        for fold in cv.folds:
            for pid, s in fold.series.items():
                s.model_checksum = f"fold{fold.split.fold_index}"
                save_probs(probs_dir / f"{pid}.probs", s)
    elif args.folds == 1:
        raise UsageError("--folds must be 0 (no cross-validation) or >= 2")

    result = train(archives, cfg.train, model_cfg)
    weights = result.weights.astype(np.float32)
    save_weights(_out(args, args.out), weights)
    pc = count_parameters(weights)
    report.update(result.report())
    report["model_config"] = model_cfg.to_dict()
    report["parameters"] = {"trainable": pc.trainable, "running": pc.running}
    report["model_checksum"] = weights_checksum(weights)
    if args.report:
        write_report(_out(args, args.report), report)


def _config_dict(cfg: PipelineConfig) -> dict:
    return {line.split(" = ")[0]: line.split(" = ", 1)[1] for line in cfg.to_lines()}


def cmd_infer(args) -> None:
    from afbeat.net1d.model import predict_proba
    weights = load_weights(args.model)
    archive = load_beat_archive(args.beats)
    x = archive.matrix()
    probs = predict_proba(weights, x) if len(x) else np.zeros(0)
    label = int(archive.labels[0]) if len(archive.labels) else None
    series = RiskSeries(archive.record_id, probs, [b.ordinal for b in archive.beats],
                        [b.rpeak_index for b in archive.beats], weights_checksum(weights), label)
    save_probs(_out(args, args.out), series)


def cmd_cam(args) -> None:
    from afbeat.interpret import compute_cam, render_cam
    weights = load_weights(args.model)
    archive = load_beat_archive(args.beats)
    if not 0 <= args.index < len(archive.beats):
        raise IndexError(f"beat index {args.index} out of range for {len(archive.beats)} beats")
    beat = archive.beats[args.index].samples
    cam = compute_cam(weights, beat, args.target_class, args.layer)
    svg = _out(args, args.out)
    render_cam(beat, cam, svg, _out(args, args.csv) if args.csv else None)


def cmd_fuse(args) -> None:
    from afbeat.fusion import bid, bid_patient, tgd
    cfg = _config(args, {"group_size": "fusion.group_size", "threshold": "fusion.threshold",
                         "aggregate": "fusion.aggregation"})
    f = cfg.fusion
    series = load_probs(args.probs)
    if f.aggregation not in ("max_group", "majority", "mean_of_all"):
        raise ValueError(f"unknown aggregation {f.aggregation!r}")
    bid(0.0, f.threshold)  # validates the threshold
    if len(series):
        res = bid_patient(series, f.group_size, f.threshold, f.aggregation)
        decision, score, groups = res.decision, res.score, res.groups
    else:
        decision, score, groups = None, None, tgd(series, f.group_size)
    write_report(_out(args, args.out), {
        "record_id": series.record_id, "group_size": f.group_size, "threshold": f.threshold,
        "aggregation": f.aggregation, "decision": decision, "score": score, "n_beats": len(series),
        "groups": [dataclasses.asdict(g) for g in groups],
    })


def cmd_trend(args) -> None:
    from afbeat.fusion import tgd, trend_csv, tri
    from afbeat.plots import render_trend_svg
    cfg = _config(args, {"group_size": "fusion.trend_group_size", "threshold": "fusion.threshold"})
    f = cfg.fusion
    series = load_probs(args.probs)
    bundle = load_record_bundle(args.bundle)
    groups = tgd(series, f.trend_group_size, bundle.af_episodes)
    records = tri(series, groups, bundle.af_episodes, f.threshold)
    _out(args, args.out).write_text(trend_csv(records, f.threshold), encoding="utf-8")
    if args.svg:
        render_trend_svg(_out(args, args.svg), bundle.samples, bundle.fs, bundle.af_episodes, records,
                         f.threshold)


def cmd_evaluate(args) -> None:
    from afbeat.evaluation import calibration, classification_metrics
    cfg = _config(args, {"threshold": "evaluation.threshold", "bins": "evaluation.calibration_bins"})
    e = cfg.evaluation
    series = _load_series(args.probs)
    labels = _series_labels(series, args.labels)
    ids = sorted(series)
    scores = np.concatenate([series[r].probabilities for r in ids]) if ids else np.zeros(0)
    y = np.concatenate([np.full(len(series[r]), labels[r]) for r in ids]) if ids else np.zeros(0, int)
    if not len(scores):
        raise ValueError("no beats to evaluate")
    rep = classification_metrics(scores, y, e.threshold)
    write_report(_out(args, args.out), {
        "records": len(ids), "metrics": rep.to_dict(curves=args.curves),
        "calibration": [dataclasses.asdict(b) for b in calibration(scores, y, e.calibration_bins)],
    })


def cmd_subgroup(args) -> None:
    from afbeat.evaluation import subgroup_classify, subgroup_evaluate
    cfg = _config(args, {"window": "evaluation.window_s", "threshold": "evaluation.threshold"})
    e = cfg.evaluation
    series = _load_series(args.probs)
    bundles = {}
    for p in _expand(args.bundle, ".ecgb"):
        b = load_record_bundle(p)
        bundles[b.record_id] = b
        if b.patient_id:
            bundles.setdefault(b.patient_id, b)
    assignments, scores, labels = [], [], []
    for rid in sorted(series):
        if rid not in bundles:
            raise ValueError(f"no bundle for record {rid!r}")
        rec = bundles[rid]
        s = series[rid]
        for o, r, p in zip(s.ordinals, s.rpeaks, s.probabilities):
            beat = Beat(np.zeros(0), int(r), int(o), "N", 0, 0)
            assignments.append(subgroup_classify(beat, rec, e.window_s))
            scores.append(p)
            labels.append(rec.patient_label)
    report = subgroup_evaluate(assignments, scores, labels, e.threshold)
    write_report(_out(args, args.out), {"window_seconds": e.window_s, "threshold": e.threshold,
                                        "categories": report})


def cmd_sweep(args) -> None:
    from afbeat.evaluation import bid_sweep
    cfg = _config(args, {"n": "evaluation.sweep_n", "threshold": "fusion.threshold",
                         "aggregate": "fusion.aggregation"})
    series = _load_series([args.probs_dir])
    labels = _series_labels(series, args.labels)
    rows = bid_sweep(series, labels, cfg.evaluation.sweep_n, cfg.fusion.threshold, cfg.fusion.aggregation)
    cols = ["n", "auc", "accuracy", "f1", "recall", "precision", "patients", "auc_monotone_nondecreasing"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    _out(args, args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_bench(args) -> None:
    from afbeat.evaluation import benchmark
    from afbeat.net1d.model import build_model
    seed = args.seed if args.seed is not None else 0
    if args.model:
        weights = load_weights(args.model)
    else:
        cfg = _config(args, {})
        weights = build_model(cfg.model, seed)
    result = benchmark(weights, args.runs, seed=seed)
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        _out(args, args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_synth(args) -> None:
    from afbeat.synthetic import generate_synthetic
    seed = args.seed if args.seed is not None else 0
    bundles = generate_synthetic(args.patients, args.beats, seed, ectopic=not args.no_ectopic,
                                 af_episode=not args.no_af)
    target = Path(args.out_dir or ".")
    target.mkdir(parents=True, exist_ok=True)
    lines = ["record_id,label"]
    for b in bundles:
        save_record_bundle(target / f"{b.record_id}.ecgb", b, payload=args.payload)
        lines.append(f"{b.record_id},{b.patient_label}")
    (target / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_quintiles(args) -> None:
    from afbeat.evaluation import risk_quintile_waveforms
    from afbeat.net1d.model import predict_proba
    weights = load_weights(args.model)
    mats = [load_beat_archive(p).matrix() for p in _expand(args.beats, ".beats")]
    x = np.concatenate(mats) if mats else np.zeros((0, weights.config.beat_length))
    waves = risk_quintile_waveforms(x, predict_proba(weights, x) if len(x) else np.zeros(0), args.parts)
    lines = ["position," + ",".join(f"part{i + 1}" for i in range(len(waves)))]
    for j in range(waves.shape[1]):
        lines.append(f"{j}," + ",".join(repr(float(v)) for v in waves[:, j]))
    _out(args, args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- parser -------------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies default to SUPPRESS so they never clobber values given before the subcommand
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = _Parser(add_help=False)
    common.add_argument("--config", default=d(None), help="key-value config file (flags override it)")
    common.add_argument("--out-dir", default=d(None), help="root directory for relative output paths")
    common.add_argument("--seed", type=int, default=d(None), help="seed for every random choice")
    common.add_argument("--jobs", type=int, default=d(1), help="record-level worker threads")
    common.add_argument("--log-level", default=d("WARNING"), choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="afbeat", description="Beat-level AF risk pipeline.", parents=[_global_flags(False)])
    parser.add_argument("--version", action="store_true", help="print version and weights format")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("preprocess", cmd_preprocess, "bandpass-filter a record bundle")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)
    p.add_argument("--order", type=int)
    p.add_argument("--payload", choices=["binary", "inline"], default="binary")

    p = add("segment", cmd_segment, "cut beats around R-peaks")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--length", type=int)
    p.add_argument("--skip-head", type=int)
    p.add_argument("--skip-tail", type=int)
    p.add_argument("--keep", help="comma-separated beat types, or 'all'")

    p = add("train", cmd_train, "cross-validate and train the final model")
    p.add_argument("--data", required=True, help="directory of .beats (preferred) or .ecgb files")
    p.add_argument("--folds", type=int, default=5, help="0 skips cross-validation")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--probs-dir", default="cv_probs", help="held-out .probs per patient")

    p = add("infer", cmd_infer, "per-beat AF probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--beats", required=True)
    p.add_argument("--out", required=True)

    p = add("cam", cmd_cam, "saliency map of one beat")
    p.add_argument("--model", required=True)
    p.add_argument("--beats", required=True)
    p.add_argument("--index", type=int, required=True, help="0-based position in the archive")
    p.add_argument("--class", dest="target_class", type=int, choices=[0, 1], default=1)
    p.add_argument("--layer")
    p.add_argument("--out", required=True, help="SVG path; a .csv sidecar is written next to it")
    p.add_argument("--csv")

    p = add("fuse", cmd_fuse, "patient decision from grouped beats")
    p.add_argument("--probs", required=True)
    p.add_argument("--group-size", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--aggregate", choices=["max_group", "majority", "mean_of_all"])
    p.add_argument("--out", required=True)

    p = add("trend", cmd_trend, "risk trend over a recording")
    p.add_argument("--probs", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--group-size", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--svg")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "per-beat metrics over probability files")
    p.add_argument("--probs", nargs="+", required=True, help=".probs files or directories")
    p.add_argument("--labels", help="record_id,label CSV (else the '# label=' header)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--curves", action="store_true", help="include ROC points")
    p.add_argument("--out", required=True)

    p = add("subgroup", cmd_subgroup, "metrics per rhythm-context category")
    p.add_argument("--probs", nargs="+", required=True)
    p.add_argument("--bundle", nargs="+", required=True)
    p.add_argument("--window", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "patient-level metrics across group sizes")
    p.add_argument("--probs-dir", required=True)
    p.add_argument("--labels")
    p.add_argument("--n", type=_csv_ints)
    p.add_argument("--threshold", type=float)
    p.add_argument("--aggregate", choices=["max_group", "majority", "mean_of_all"])
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, "single-threaded inference latency")
    p.add_argument("--model", help="weights file (default: freshly built full model)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--out")

    p = add("synth", cmd_synth, "synthetic annotated recordings")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--beats", type=int, required=True)
    p.add_argument("--no-ectopic", action="store_true")
    p.add_argument("--no-af", action="store_true")
    p.add_argument("--payload", choices=["binary", "inline"], default="binary")

    p = add("quintiles", cmd_quintiles, "mean beat of each risk-sorted fifth")
    p.add_argument("--model", required=True)
    p.add_argument("--beats", nargs="+", required=True)
    p.add_argument("--parts", type=int, default=5)
    p.add_argument("--out", required=True)
    return parser


def _error_kind(exc: BaseException) -> str:
    if isinstance(exc, FormatError):
        return "format"
    if isinstance(exc, FileNotFoundError):
        return "not_found"
    if isinstance(exc, (ValueError, IndexError, KeyError)):
        return "invalid_input"
    if isinstance(exc, FloatingPointError):
        return "numeric"
    return type(exc).__name__


def _fail(kind: str, message: str, status: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    if args.version:
        print(f"afbeat {__version__} weights-format {WEIGHTS_VERSION} python {platform.python_version()} "
              f"numpy {np.__version__}")
        return 0
    if args.command is None:
        return _fail("usage", "a subcommand is required", 2)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - every module error becomes one JSON line
        log.debug("command failed", exc_info=True)
        message = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        return _fail(_error_kind(exc), message.replace("\n", " "), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
