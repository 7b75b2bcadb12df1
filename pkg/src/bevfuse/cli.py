"""Command-line interface.

Subcommands: gen, train, eval, nds, ablate, viz. Exit codes: 0 success,
1 usage error, 2 data/schema error.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import metrics as metrics_mod
from .ablation import ablation_suite, write_report
from .configio import load_config
from .errors import BevFuseError
from .metrics import TP_METRIC_NAMES, EvalConfig, nds as nds_formula
from .synthetic import SceneConfig, generate_dataset, read_dataset, write_dataset
from .training import (TrainConfig, dataset_gt_frames, load_checkpoint, load_model,
                       predict_dataset, predict_scene, predictions_json,
                       save_checkpoint, train)
from .viz import find_frame, render_bev_comparison

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _summary_tuple(text: str):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            "expected 6 comma-separated values: mAP,mATE,mASE,mAOE,mAVE,mAAE")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError("summary values must be numbers") from None


def _int_list(text: str):
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="bevfuse",
                     description="camera-radar BEV fusion: data, training, metrics")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scenes", required=True, type=int, help="number of train scenes")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--config", help="scene config file (key = value)")
    p.add_argument("--val-scenes", type=int, default=None,
                   help="validation scenes (default: scenes // 5, at least 1)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="train config file (key = value)")
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--subset", choices=("all", "rain", "night"), default="all")
    p.add_argument("--report", required=True, help="metrics report output path")

    p = sub.add_parser("nds", help="standalone metrics on prediction/GT files")
    p.add_argument("--pred", help="predictions JSON")
    p.add_argument("--gt", help="ground-truth JSON")
    p.add_argument("--report", help="report output path")
    p.add_argument("--subset", choices=("all", "rain", "night"), default="all")
    p.add_argument("--summary", type=_summary_tuple,
                   help="skip matching; compute NDS from "
                        "'mAP,mATE,mASE,mAOE,mAVE,mAAE'")

    p = sub.add_parser("ablate", help="module-toggle ablations and capacity sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="base train config file")
    p.add_argument("--seeds", required=True, type=_int_list)
    p.add_argument("--report", required=True)
    p.add_argument("--k-sweep", type=_int_list, default=None,
                   help="capacity values, e.g. 10,20,30")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("viz", help="render BEV ground truth vs predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame", required=True, help="frame id")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--threshold", type=float, default=0.3)
    return parser


def _cmd_gen(args) -> int:
    config = load_config(SceneConfig, args.config, seed=args.seed)
    n_val = args.val_scenes if args.val_scenes is not None else max(1, args.scenes // 5)
    dataset = generate_dataset(config, args.scenes, n_val)
    write_dataset(dataset, args.out)
    print(f"wrote {args.scenes} train / {n_val} val scenes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = load_config(TrainConfig, args.config)
    dataset = read_dataset(args.data)
    ckpt = train(config, dataset, log_every=args.log_every)
    save_checkpoint(ckpt, args.out)
    print(f"saved checkpoint after {ckpt.step} steps to {args.out}")
    return 0


def _write_json(payload: dict, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def _cmd_eval(args) -> int:
    dataset = read_dataset(args.data)
    ckpt = load_checkpoint(args.ckpt)
    model = load_model(ckpt, dataset)
    preds = predict_dataset(model, dataset, split="val", use_radar=ckpt.config.with_rb)
    pred_path = args.report + ".predictions.json"
    gt_path = args.report + ".gt.json"
    _write_json(predictions_json(preds), pred_path)
    gt_frames = dataset_gt_frames(dataset, split="val")
    _write_json({"schema_version": 1,
                 "frames": [_gt_frame_json(f) for f in gt_frames]}, gt_path)
    report = metrics_mod.evaluate(pred_path, gt_path, EvalConfig(), subset=args.subset)
    _write_json(report.to_json(), args.report)
    if report.num_frames == 0:
        print(f"subset {args.subset!r} is empty; wrote empty report to {args.report}")
    else:
        print(f"NDS {report.nds:.4f}  mAP {report.mean_ap:.4f} "
              f"({report.num_frames} frames) -> {args.report}")
    return 0


def _gt_frame_json(frame) -> dict:
    from .detection import ATTRIBUTES, CLASSES
    return {
        "frame_id": frame.frame_id,
        "rain": frame.rain,
        "night": frame.night,
        "annotations": [
            {"class": CLASSES[a.class_id], "center": a.box.center.tolist(),
             "size": a.box.size.tolist(), "yaw": a.box.yaw,
             "velocity": a.box.velocity.tolist(),
             "attribute": ATTRIBUTES[a.attribute_id]}
            for a in frame.annotations
        ],
    }


def _cmd_nds(args, parser: _Parser) -> int:
    if args.summary is not None:
        mean_ap, *mtps = args.summary
        score = nds_formula(mean_ap, mtps)
        payload = {"schema_version": 1, "mAP": mean_ap, "NDS": score}
        payload.update({f"m{n.upper()}": v for n, v in zip(TP_METRIC_NAMES, mtps)})
        if args.report:
            _write_json(payload, args.report)
        print(f"NDS {score:.4f}")
        return 0
    if not args.pred or not args.gt:
        parser.error("nds requires either --summary or both --pred and --gt")
    report = metrics_mod.evaluate(args.pred, args.gt, EvalConfig(), subset=args.subset)
    if args.report:
        _write_json(report.to_json(), args.report)
    print(f"NDS {report.nds:.4f}  mAP {report.mean_ap:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    base = load_config(TrainConfig, args.config)
    report = ablation_suite(args.data, base, args.seeds, k_sweep=args.k_sweep,
                            jobs=args.jobs)
    write_report(report, args.report)
    print(f"wrote ablation report ({len(report['ablation'])} rows) to {args.report}")
    return 0


def _cmd_viz(args) -> int:
    dataset = read_dataset(args.data)
    ckpt = load_checkpoint(args.ckpt)
    model = load_model(ckpt, dataset)
    frame = find_frame(dataset, args.frame)
    scene = next(s for s in dataset.scenes if any(f.frame_id == args.frame for f in s.frames))
    preds = predict_scene(model, scene, dataset, use_radar=ckpt.config.with_rb)
    render_bev_comparison(frame.annotations, preds[args.frame], dataset.grid,
                          args.out, confidence_threshold=args.threshold)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "nds":
            return _cmd_nds(args, parser)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "viz":
            return _cmd_viz(args)
        parser.error(f"unknown command {args.command!r}")
    except BevFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
