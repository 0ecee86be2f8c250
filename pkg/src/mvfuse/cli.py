"""Command-line entry point: ``mvfuse {synth,init,optimize,ablate,eval}``.

Exit codes: 0 ok, 1 usage or invalid input, 2 numerical abort, 3 I/O or file
format error. Run settings resolve as flags > ``--config`` JSON > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import container, fusion, sceneio
from .bodymodel import load_model
from .metrics import report_dict
from .optimizer import NumericalAbort, TTAConfig, run_tta
from .prior import decode, load_head, synth_head
from .rotmath import geodesic_dist
from .synth import SceneSpec, generate_scene, make_rig, sweep

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
AXIS_ALIASES = {"views": "n_views", "n_views": "n_views", "steps": "steps", "lr": "lr",
                "noise": "noise"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _outlier(text):
    try:
        view, joint, offset = text.split(",")
        return int(view), int(joint), float(offset)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected VIEW,JOINT,RADIANS") from exc


def _fmt(x):
    return f"{x:.3f}"


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    model = load_model(args.model) if args.model else make_rig(args.n_verts, args.rig_seed)
    head = load_head(args.head) if args.head else synth_head(args.head_seed, args.head_dim)
    try:
        spec = SceneSpec(seed=args.seed, n_views=args.views, detection_noise_px=args.noise_px,
                         detection_dropout=args.dropout, prior_pose_noise_rad=args.prior_noise,
                         prior_shape_noise=args.shape_noise, outlier_views=tuple(args.outlier),
                         calibrated=not args.uncalibrated)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    scene = generate_scene(model, head, spec)
    sceneio.save_scene(scene, args.out)
    crc = zlib.crc32(Path(args.out).read_bytes())
    print(f"scene {args.out}: views={scene.n_views} calibrated={scene.calibrated} "
          f"noise_px={spec.detection_noise_px} dropout={spec.detection_dropout} "
          f"prior_noise_rad={spec.prior_pose_noise_rad} shape_noise={spec.prior_shape_noise} "
          f"outliers={len(spec.outlier_views)} V={model.n_verts} D={head.dim} crc32={crc:08x}")
    return EXIT_OK


def cmd_init(args):
    scene = sceneio.load_scene(args.scene)
    calibrated = scene.calibrated and not args.uncalibrated
    pairs = [decode(scene.head, z) for z in scene.tokens]
    ext = scene.extrinsics() if calibrated else None
    virtual = fusion.init_strategy(pairs, args.strategy, ext)
    if virtual is None:
        print(f"strategy {args.strategy}: no virtual view")
        return EXIT_OK
    R = virtual.pose.rotmats
    angles = geodesic_dist(np.eye(3), R[1:])
    print(f"strategy {args.strategy}: orient_mode={virtual.orient_mode} "
          f"max_joint_angle={_fmt(angles.max())} rad mean_joint_angle={_fmt(angles.mean())} rad "
          f"|beta|={_fmt(np.linalg.norm(virtual.shape))}")
    if args.strategy == "weighted":
        kept = fusion.retained_sets([p for p, _ in pairs], ext)
        counts = ["-" if k is None else str(len(k)) for k in kept]
        print("retained views per joint: " + " ".join(counts))
    if args.out:
        Path(args.out).write_text(json.dumps({
            "strategy": args.strategy, "orient_mode": virtual.orient_mode,
            "params": virtual.params.tolist()}) + "\n")
    return EXIT_OK


_FLAG_TO_KEY = {"steps": "steps", "warmup": "warmup_steps", "lr": "eta",
                "lr_virtual": "eta_virtual", "clip": "clip_norm",
                "consistency": "consistency_mode", "component": "component",
                "strategy": "strategy", "optimizer": "optimizer"}


def _resolve_config(args):
    raw = sceneio.load_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "uncalibrated", False):
        raw["calibrated"] = False
    if "steps" in raw and "warmup_steps" not in raw:
        raw["warmup_steps"] = min(TTAConfig.warmup_steps, int(raw["steps"]))
    try:
        config, paths = sceneio.config_from_dict(raw)
    except sceneio.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return config, paths


def cmd_optimize(args):
    config, paths = _resolve_config(args)
    scene_path = args.scene or paths.get("scene")
    if not scene_path:
        raise UsageError("no scene given (positional argument or 'scene' config key)")
    out_dir = Path(args.out_dir or paths.get("out_dir") or ".")
    scene = sceneio.load_scene(scene_path)
    result = run_tta(scene, scene.head, config)
    calibrated = scene.calibrated if config.calibrated is None else config.calibrated
    out_dir.mkdir(parents=True, exist_ok=True)
    sceneio.save_result(result, out_dir / "result.bin", calibrated)
    sceneio.export_result(result, out_dir / "trace.jsonl", "records")
    if result.metric_trace:
        sceneio.export_result(result, out_dir / "summary.json", "summary")
        first, last = result.metric_trace[0], result.final_report
        print(f"steps={config.steps} mpjpe_step0={first.mpjpe:.6g} mm "
              f"mpjpe_final={last.mpjpe:.6g} mm pa_mpjpe_final={last.pa_mpjpe:.6g} mm "
              f"loss_final={result.loss_trace[-1]['total']:.6g}")
    else:
        print(f"steps={config.steps} loss_final={result.loss_trace[-1]['total']:.6g} (no ground truth)")
    return EXIT_OK


def cmd_ablate(args):
    axis = AXIS_ALIASES.get(args.axis)
    if axis is None:
        raise UsageError(f"unknown axis {args.axis!r}; choose from views, steps, lr, noise")
    config, _ = _resolve_config(args)
    scene = sceneio.load_scene(args.scene)
    if "spec" not in scene.meta:
        raise UsageError("ablation needs a scene written by 'mvfuse synth' (no generator spec)")
    spec = SceneSpec.from_dict(scene.meta["spec"])
    kind = float if axis in ("lr", "noise") else int
    values = [kind(v) for v in args.values]
    if not values:
        raise UsageError("--values is empty")
    rows = sweep(scene.model, scene.head, spec, axis, values, config)
    cols = [axis, "mpjpe", "pa_mpjpe", "mpvpe", "pck", "auc", "epe"]
    print("  ".join(f"{c:>10}" for c in cols))
    for row in rows:
        print("  ".join(f"{row[c]:>10.4g}" if isinstance(row[c], float) else f"{row[c]:>10}"
                        for c in cols))
    if args.out:
        Path(args.out).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return EXIT_OK


def cmd_eval(args):
    result = sceneio.load_result(args.result)
    scene = sceneio.load_scene(args.scene)
    if scene.gt is None:
        raise UsageError(f"{args.scene} has no ground-truth block")
    report = sceneio.evaluate_result(result, scene)
    print(json.dumps(report_dict(report), sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run config (flat keys)")
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-virtual", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--consistency", choices=("pairwise", "star"))
    p.add_argument("--component", choices=("learned_token", "smpl_params"))
    p.add_argument("--strategy", choices=fusion.STRATEGIES)
    p.add_argument("--optimizer", choices=("gd", "adam"))
    p.add_argument("--uncalibrated", action="store_true", help="ignore extrinsics")


def build_parser():
    parser = _Parser(prog="mvfuse", description="Multi-view body fitting by test-time adaptation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--noise-px", type=float, default=3.0)
    p.add_argument("--dropout", type=float, default=0.05)
    p.add_argument("--prior-noise", type=float, default=0.15)
    p.add_argument("--shape-noise", type=float, default=0.1)
    p.add_argument("--outlier", type=_outlier, action="append", default=[],
                   metavar="VIEW,JOINT,RAD")
    p.add_argument("--uncalibrated", action="store_true")
    p.add_argument("--model", help="body model file (default: built-in synthetic rig)")
    p.add_argument("--head", help="prior head file (default: seeded random head)")
    p.add_argument("--n-verts", type=int, default=200)
    p.add_argument("--rig-seed", type=int, default=0)
    p.add_argument("--head-seed", type=int, default=1)
    p.add_argument("--head-dim", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", help="initialize and summarize the virtual view")
    p.add_argument("scene")
    p.add_argument("--strategy", choices=fusion.STRATEGIES, default="weighted")
    p.add_argument("--uncalibrated", action="store_true")
    p.add_argument("--out", help="write the virtual view as JSON")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="run test-time adaptation on a scene")
    p.add_argument("scene", nargs="?")
    p.add_argument("--out-dir")
    _add_run_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("ablate", help="sweep one setting and tabulate metrics")
    p.add_argument("scene")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", type=_csv(str), required=True)
    p.add_argument("--out", help="write rows as JSON lines")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="score a stored result against scene ground truth")
    p.add_argument("result")
    p.add_argument("scene")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mvfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"mvfuse {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, container.FormatError) as exc:
        print(f"mvfuse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mvfuse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
