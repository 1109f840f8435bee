"""Command-line interface.

Exit codes: 0 success, 2 bad arguments or missing input, 3 malformed input
file, 4 numeric divergence during training.
"""

import argparse
import dataclasses
import csv
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import data
from ._binio import FormatError, write_raster
from .evidence import TotalConflictError, fuse_opinions, opinion_from_evidence, write_uncertainty
from .features import extract_all, write_features
from .gcn import read_checkpoint, write_checkpoint
from .graph import segment_superpixels, write_segmentation
from .trainer import (
    VIEW_MODES,
    DivergenceError,
    TrainConfig,
    evaluate,
    predict_pixels,
    prepare,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DIVERGED = 0, 2, 3, 4
LABEL_MAGIC = b"PLAB"

_DEFAULTS = TrainConfig()


class UsageError(Exception):
    """Bad arguments, bad config keys or a missing input file."""


def _train_flags(p, suppress):
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--lr", type=float, default=d(_DEFAULTS.lr), help="learning rate")
    p.add_argument("--epochs", type=int, default=d(_DEFAULTS.epochs), help="training epochs")
    p.add_argument("--beta1", type=float, default=d(_DEFAULTS.beta1), help="first-moment decay")
    p.add_argument("--beta2", type=float, default=d(_DEFAULTS.beta2), help="second-moment decay")
    p.add_argument("--adam-eps", type=float, default=d(_DEFAULTS.adam_eps), help="optimizer epsilon")
    p.add_argument("--train-frac", type=float, default=d(_DEFAULTS.fractions[0]),
                   help="training share of labeled pixels per class")
    p.add_argument("--val-frac", type=float, default=d(_DEFAULTS.fractions[1]), help="validation share")
    p.add_argument("--test-frac", type=float, default=d(_DEFAULTS.fractions[2]), help="test share")
    p.add_argument("--q", type=int, default=d(_DEFAULTS.q), help="subspace dimension")
    p.add_argument("--anneal-epochs", type=int, default=d(_DEFAULTS.anneal_epochs),
                   help="epochs of linear KL warm-up")
    p.add_argument("--hidden", type=int, default=d(_DEFAULTS.hidden), help="hidden width per branch")
    p.add_argument("--views", choices=VIEW_MODES, default=d(_DEFAULTS.views),
                   help="train both branches with fusion, or one branch alone")
    p.add_argument("--bandwidth", default=d(_DEFAULTS.bandwidth),
                   help="HPD kernel width: 'median' or a positive number")


def _common(p, suppress):
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--config", default=d(None), help="JSON file of flag values (flags win)")
    p.add_argument("--seed", type=int, default=d(0), help="seed for every random draw")
    p.add_argument("--threads", type=int, default=d(1), help="cap on BLAS worker threads")


def build_parser(suppress=False):
    """Argument parser; ``suppress=True`` keeps only explicitly given flags."""
    def d(value):
        return argparse.SUPPRESS if suppress else value

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="mvgcn", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample a scene from a JSON scene spec", formatter_class=fmt)
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output PSAR file")
    p.add_argument("--labels-pgm", default=d(None), help="also export labels as PGM")
    _common(p, suppress)

    p = sub.add_parser("features", help="write the 57-dim feature raster", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="input PSAR scene")
    p.add_argument("--out", required=True, help="output PFEA file")
    p.add_argument("--standardize", action="store_true", default=d(False),
                   help="standardize over labeled pixels before writing")
    _common(p, suppress)

    p = sub.add_parser("segment", help="write the superpixel id raster", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="input PSAR scene")
    p.add_argument("--out", required=True, help="output PSEG file")
    p.add_argument("--delta", type=float, default=d(_DEFAULTS.delta), help="pixels per superpixel")
    _common(p, suppress)

    p = sub.add_parser("train", help="train and write a checkpoint", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="input PSAR scene")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--log", default=d(None), help="training log CSV")
    p.add_argument("--delta", type=float, default=d(_DEFAULTS.delta), help="pixels per superpixel")
    _train_flags(p, suppress)
    _common(p, suppress)

    p = sub.add_parser("predict", help="write label and uncertainty rasters", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="input PSAR scene")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    p.add_argument("--labels-out", required=True, help="output PLAB (u16) raster")
    p.add_argument("--uncertainty-out", required=True, help="output PUNC (f32) raster")
    p.add_argument("--pgm", default=d(None), help="also export labels as PGM")
    _common(p, suppress)

    p = sub.add_parser("evaluate", help="report metrics on the test split", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="input PSAR scene")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    p.add_argument("--out", default=d(None), help="key = value report file")
    _common(p, suppress)

    p = sub.add_parser("fuse-demo", help="fuse two evidence CSVs", formatter_class=fmt)
    p.add_argument("--e1", required=True, help="CSV of evidence rows for view 1")
    p.add_argument("--e2", required=True, help="CSV of evidence rows for view 2")
    _common(p, suppress)
    return parser


def _resolve(argv):
    """Defaults, overridden by the config file, overridden by explicit flags."""
    args = build_parser().parse_args(argv)
    explicit = vars(build_parser(suppress=True).parse_args(argv))
    args.given = set(explicit)
    if args.config:
        _need(args.config)
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise FormatError(f"{args.config}: expected a JSON object")
        known = set(vars(args)) - {"command", "config", "given"}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            if dest not in explicit:
                setattr(args, dest, value)
                args.given.add(dest)
    return args


def _need(path):
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _config_from_args(args):
    bw = args.bandwidth
    if bw != "median":
        try:
            bw = float(bw)
        except ValueError:
            raise UsageError(f"--bandwidth must be 'median' or a number, got {bw!r}") from None
    try:
        return TrainConfig(
            lr=float(args.lr), epochs=int(args.epochs), beta1=float(args.beta1),
            beta2=float(args.beta2), adam_eps=float(args.adam_eps), seed=int(args.seed),
            fractions=(args.train_frac, args.val_frac, args.test_frac), delta=float(args.delta),
            q=int(args.q), anneal_epochs=int(args.anneal_epochs), hidden=int(args.hidden),
            views=args.views, bandwidth=bw,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(args):
    _need(args.scene)
    _need(args.checkpoint)
    scene = data.read_scene(args.scene)
    params, meta, extra = read_checkpoint(args.checkpoint)
    if meta.get("class_count") != scene.class_count:
        raise FormatError("checkpoint and scene disagree on the class count")
    config = TrainConfig(**{k: v for k, v in meta["config"].items()})
    prepared = prepare(scene, config, feature_stats=(extra["feature_mean"], extra["feature_std"]))
    return scene, params, prepared


def cmd_synth(args):
    _need(args.spec)
    try:
        spec = data.load_scene_spec(args.spec)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.spec}: invalid JSON ({exc})") from None
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{args.spec}: {exc}") from None
    if "seed" in args.given:
        spec = dataclasses.replace(spec, seed=args.seed)
    scene = data.synth_scene(spec)
    data.write_scene(scene, args.out)
    if args.labels_pgm:
        data.write_pgm(args.labels_pgm, scene.labels, maxval=scene.class_count)
    print(f"wrote {args.out} ({scene.height}x{scene.width}, {scene.class_count} classes)")


def cmd_features(args):
    _need(args.scene)
    scene = data.read_scene(args.scene)
    field_ = extract_all(scene)
    write_features(args.out, field_.standardized() if args.standardize else field_.values)
    print(f"wrote {args.out} ({field_.values.shape[2]} features per pixel)")


def cmd_segment(args):
    _need(args.scene)
    scene = data.read_scene(args.scene)
    try:
        seg = segment_superpixels(scene, args.delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_segmentation(args.out, seg)
    print(f"wrote {args.out} ({seg.count} superpixels)")


def cmd_train(args):
    _need(args.scene)
    config = _config_from_args(args)
    scene = data.read_scene(args.scene)
    if scene.labels is None:
        raise UsageError(f"{args.scene} carries no labels")
    result = train(scene, config, log_path=args.log)
    meta = {
        "config": config.to_dict(),
        "class_count": scene.class_count,
        "best_epoch": result.best_epoch,
    }
    extra = {"feature_mean": result.prepared.feature_mean, "feature_std": result.prepared.feature_std}
    write_checkpoint(args.out, result.params, meta, extra)
    print(f"wrote {args.out} (best epoch {result.best_epoch})")


def cmd_predict(args):
    scene, params, prepared = _load_model(args)
    labels, _, u = predict_pixels(prepared, params)
    write_raster(args.labels_out, LABEL_MAGIC, labels, "<u2")
    write_uncertainty(args.uncertainty_out, u)
    if args.pgm:
        data.write_pgm(args.pgm, labels, maxval=max(scene.class_count, 1))
    print(f"wrote {args.labels_out} and {args.uncertainty_out}")


def cmd_evaluate(args):
    scene, params, prepared = _load_model(args)
    if scene.labels is None:
        raise UsageError(f"{args.scene} carries no labels")
    report = evaluate(scene, params, prepared)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)


def _read_evidence_csv(path):
    _need(path)
    rows = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                if line_no == 1:  # header
                    continue
                raise FormatError(f"{path}:{line_no}: non-numeric evidence") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: need equal-length numeric rows")
    return np.array(rows)


def cmd_fuse_demo(args):
    e1 = _read_evidence_csv(args.e1)
    e2 = _read_evidence_csv(args.e2)
    if e1.shape != e2.shape:
        raise FormatError(f"evidence shapes differ: {e1.shape} vs {e2.shape}")
    try:
        _, _, b1, u1 = opinion_from_evidence(e1)
        _, _, b2, u2 = opinion_from_evidence(e2)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    try:
        b, u, K = fuse_opinions(b1, u1, b2, u2)
    except TotalConflictError as exc:
        raise FormatError(str(exc)) from None
    C = e1.shape[1]
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow([f"b{k}" for k in range(C)] + ["u", "conflict"])
    for i in range(e1.shape[0]):
        out.writerow([repr(float(x)) for x in b[i]] + [repr(float(u[i])), repr(float(K[i]))])


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "segment": cmd_segment,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "fuse-demo": cmd_fuse_demo,
}


def run(argv=None):
    """Execute one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _resolve(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    try:
        with threadpool_limits(limits=max(1, int(args.threads))):
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DivergenceError, TotalConflictError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
