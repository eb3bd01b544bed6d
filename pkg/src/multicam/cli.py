"""Command-line entry point: ``multicam <subcommand>``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
The worker count for cross-validation comes from the MULTICAM_WORKERS variable.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import MulticamError, timeline_from_intervals
from .evaluation import (
    aggregate_rows,
    means_from_json,
    reference_rows,
    parse_variants,
    align_table,
    csv_table,
    render_reports,
    run_experiment,
)
from .features import session_features, write_feature_cache
from .ingest import (
    Manifest,
    ManifestEntry,
    parse_intervals,
    read_manifest,
    serialize_detections,
    serialize_intervals,
    serialize_labels,
)
from .naive import classify_session_naive
from .neural import (
    NumericalError,
    TrainConfig,
    load_checkpoint,
    loss_history_csv,
    predict_session,
    save_checkpoint,
    train,
)
from .simulator import PRESETS, ScenarioConfig, preset, simulate_sessions

log = logging.getLogger("multicam")

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _write(path: Path, text: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        dropout_p=args.dropout,
        batch_size=args.batch_size,
        seed=args.seed,
        optimizer=args.optimizer,
        samples_per_video_per_epoch=args.samples_per_video,
        class_weighting=args.class_weighting,
        dtype=args.dtype,
    ).validate()


def cmd_simulate(args) -> int:
    if args.config:
        cfg = ScenarioConfig.load(args.config)
    else:
        cfg = preset(args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_frames is not None:
        cfg.n_frames = args.n_frames
    cfg.validate()
    if args.n < 0:
        raise MulticamError("-n must be non-negative")
    out = Path(args.out)
    manifest = Manifest(fps=cfg.fps, base_dir=out)
    for sim in simulate_sessions(cfg, args.n):
        b = sim.bundle
        entry = ManifestEntry(b.session_id, f"sessions/{b.session_id}_top.jsonl",
                              f"sessions/{b.session_id}_close.jsonl",
                              f"sessions/{b.session_id}_intervals.csv")
        _write(out / entry.top_path, serialize_detections(b.top))
        _write(out / entry.close_path, serialize_detections(b.close))
        _write(out / entry.intervals_path, serialize_intervals(b.truth.to_intervals(), cfg.fps))
        manifest.sessions.append(entry)
    _write(out / "scenario.json", cfg.to_json())
    _write(out / "manifest.json", manifest.to_json())
    print(f"wrote {args.n} sessions to {out}")
    return 0


def cmd_label(args) -> int:
    out = Path(args.out)
    if args.intervals:
        intervals = parse_intervals(Path(args.intervals).read_text(), args.fps)
        n = args.n_frames if args.n_frames is not None else max((iv.end_frame for iv in intervals), default=0)
        _write(out, serialize_labels(timeline_from_intervals(intervals, n)))
        return 0
    manifest = read_manifest(args.manifest)
    for entry in manifest.sessions:
        bundle = manifest.load(entry)
        if bundle.truth is None:
            raise MulticamError(f"session {entry.session_id} has no intervals")
        _write(out / f"{entry.session_id}_truth.csv", serialize_labels(bundle.truth))
    return 0


def cmd_fuse(args) -> int:
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    for entry in manifest.sessions:
        labels = classify_session_naive(manifest.load(entry), args.cameras)
        _write(out / f"{entry.session_id}_{args.cameras}.csv", serialize_labels(labels))
    return 0


def cmd_featurize(args) -> int:
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.sessions:
        write_feature_cache(out / f"{entry.session_id}.feat", session_features(manifest.load(entry)))
    return 0


def cmd_train(args) -> int:
    sessions = read_manifest(args.manifest).load_all()
    cfg = _train_config(args)
    result = train(sessions, cfg, args.variant,
                   on_epoch=lambda e, loss: log.info("epoch %d loss %.5f", e, loss))
    save_checkpoint(args.out, result.params)
    loss_path = Path(args.loss_csv) if args.loss_csv else Path(str(args.out) + ".loss.csv")
    _write(loss_path, loss_history_csv(result.loss_history))
    return 0


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    for entry in manifest.sessions:
        labels = predict_session(params, manifest.load(entry))
        _write(out / f"{entry.session_id}_{params.variant.value}.csv", serialize_labels(labels))
    return 0


def cmd_evaluate(args) -> int:
    sessions = read_manifest(args.manifest).load_all()
    variants = parse_variants(args.variants)
    cfg = _train_config(args) if any(v.trained for v in variants) and not args.no_train else None
    result = run_experiment(sessions, variants, cfg, k=args.folds, seed=args.seed)
    files = render_reports(result, with_reference=args.compare == "paper")
    out = Path(args.out)
    for name, text in files.items():
        _write(out / name, text)
    sys.stdout.write(files["aggregate.txt"])
    return 0


def cmd_report(args) -> int:
    compare = args.compare == "paper"
    if args.results is None:
        if not compare:
            raise MulticamError("report needs --results, --compare paper, or both")
        rows = reference_rows()
    else:
        means = means_from_json(Path(args.results).read_text())
        rows = aggregate_rows(means, with_reference=compare)
    sys.stdout.write(csv_table(rows) if args.format == "csv" else align_table(rows))
    return 0


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=2000)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--dropout", type=float, default=0.3)
    g.add_argument("--batch-size", type=int, default=16)
    g.add_argument("--samples-per-video", type=int, default=256,
                   help="random (hand, frame) samples drawn per video per epoch")
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    g.add_argument("--class-weighting", action="store_true",
                   help="inverse-frequency class weights in the loss")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multicam", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None,
                        help="single source of randomness for simulation, folds, init and sampling")
    parser.add_argument("-v", "--verbose", action="store_true")
    # the same flags after the subcommand name; SUPPRESS keeps the global value when absent
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_parser = sub.add_parser

    def add_parser(name, **kw):
        return _add_parser(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("simulate", help="generate synthetic sessions and a manifest")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), default="occluded-noisy")
    src.add_argument("--config", help="ScenarioConfig JSON file")
    p.add_argument("-n", type=int, default=20, help="number of sessions")
    p.add_argument("--n-frames", type=int, default=None, help="override session length")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("label", help="derive ground-truth label tables from intervals")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--intervals", help="single interval CSV")
    src.add_argument("--manifest")
    p.add_argument("--n-frames", type=int, default=None)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True, help="output CSV (with --intervals) or directory")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("fuse", help="rule-based labels from one or both cameras")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cameras", choices=("top", "close", "both"), default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("featurize-cache", help="write binary per-frame feature caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one classifier on all manifest sessions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=("high", "low", "mcc"), default="mcc")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label sessions with a trained checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="k-fold simulation-out evaluation of several variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variants", default="top-naive,close-naive,both-naive,low,high,mcc")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--compare", choices=("paper",), default=None,
                   help="add the published reference figures next to each variant")
    p.add_argument("--no-train", action="store_true", help="refuse to train models")
    _add_train_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print aggregate tables from results.json")
    p.add_argument("--results", default=None)
    p.add_argument("--compare", choices=("paper",), default=None,
                   help="add the published reference figures next to each variant")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command != "simulate":
        args.seed = 0
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MulticamError, OSError) as exc:
        field = getattr(exc, "field", None)
        print(f"error: {exc}" + (f" [field: {field}]" if field else ""), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
