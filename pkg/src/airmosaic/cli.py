"""Command-line entry points: `map run`, `map synth`, `map stats`.

Exit codes: 0 success, 2 configuration error, 3 pipeline abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


def _parse_kv(pairs: list[str]) -> dict:
    """key=value option lists; values parse as YAML scalars/lists."""
    import yaml

    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = yaml.safe_load(value)
    return out


def _cmd_run(args: argparse.Namespace) -> int:
    from .pipeline import ConfigError, PipelineConfig, run
    from .pose_stage import StagePoseConfig

    try:
        pose_cfg = StagePoseConfig(
            min_reference_frames=args.min_reference_frames,
            max_reference_rmse=args.max_reference_rmse,
            keyframe_min_translation=args.keyframe_translation,
            fallback_enabled=not args.no_fallback,
        )
        config = PipelineConfig(
            mode=args.mode,
            input_dir=Path(args.input),
            output_dir=Path(args.output),
            output_gsd=args.gsd,
            variance_threshold=args.variance_threshold,
            snapshot_every=args.snapshot_every,
            queue_capacity=args.queue_capacity,
            pose_provider=args.pose_provider,
            pose_options=_parse_kv(args.pose_opt),
            densifier=args.densifier,
            densifier_options=_parse_kv(args.densifier_opt),
            stride=args.stride,
            pose=pose_cfg,
            export_cloud=args.export_cloud,
        )
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if not config.input_dir.is_dir():
        print(f"configuration error: input {config.input_dir} is not a directory", file=sys.stderr)
        return 2

    try:
        report = run(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    print(
        f"{report.status}: ingested {report.frames_ingested}, "
        f"skipped {report.frames_skipped}, fused {report.frames_fused}, "
        f"runtime {report.runtime_s:.1f} s"
    )
    for path in report.outputs:
        print(f"  wrote {path}")
    if report.status != "ok":
        print(f"pipeline aborted: {report.error}", file=sys.stderr)
        return 3
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SceneSpec, generate

    try:
        spec = SceneSpec.from_yaml(args.spec)
        out = generate(spec, args.out)
    except (OSError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    n = len(list((Path(out) / "frames").glob("*.png")))
    print(f"generated {n} frames in {out}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    try:
        report = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    print(f"run status: {report.get('status')}  mode: {report.get('mode')}")
    print(
        f"frames: {report.get('frames_ingested')} in / "
        f"{report.get('frames_fused')} fused / {report.get('frames_skipped')} skipped"
    )
    stage_stats = report.get("stage_stats", {})
    print(f"{'stage':>10} {'samples':>8} {'f_in':>7} {'f_out':>7} {'delta_perf':>11}")
    for stage, samples in stage_stats.items():
        if not samples:
            print(f"{stage:>10} {0:>8}")
            continue
        tail = samples[-max(1, len(samples) // 4):]
        f_in = sum(s["f_in"] for s in tail) / len(tail)
        f_out = sum(s["f_out"] for s in tail) / len(tail)
        deltas = [s["delta_perf"] for s in tail if s["f_out"] > 0]
        delta = sum(deltas) / len(deltas) if deltas else float("nan")
        print(f"{stage:>10} {len(samples):>8} {f_in:>7.2f} {f_out:>7.2f} {delta:>11.3f}")
    if args.history:
        for stage, samples in stage_stats.items():
            print(f"\n{stage} history (t, f_in, f_out, delta):")
            for s in samples:
                print(f"  {s['t']:7.1f} {s['f_in']:6.2f} {s['f_out']:6.2f} {s['delta_perf']:7.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="map", description="Incremental aerial orthophoto and elevation mapping."
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the mapping pipeline over a dataset")
    p_run.add_argument("--mode", required=True, choices=("gnss", "visual", "elevation"))
    p_run.add_argument("--input", required=True, help="dataset directory")
    p_run.add_argument("--output", required=True, help="output directory")
    p_run.add_argument("--gsd", type=float, default=None, help="output ground sampling distance [m]")
    p_run.add_argument("--variance-threshold", type=float, default=1.0)
    p_run.add_argument("--snapshot-every", type=int, default=0, metavar="N")
    p_run.add_argument("--pose-provider", default="none", metavar="NAME")
    p_run.add_argument("--densifier", default="groundtruth", metavar="NAME")
    p_run.add_argument("--pose-opt", action="append", metavar="K=V")
    p_run.add_argument("--densifier-opt", action="append", metavar="K=V")
    p_run.add_argument("--queue-capacity", type=int, default=8)
    p_run.add_argument("--stride", type=int, default=2, help="depth-map pixel stride")
    p_run.add_argument("--min-reference-frames", type=int, default=20)
    p_run.add_argument("--max-reference-rmse", type=float, default=1.0)
    p_run.add_argument("--keyframe-translation", type=float, default=None)
    p_run.add_argument("--no-fallback", action="store_true")
    p_run.add_argument("--export-cloud", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True, help="scene spec yaml")
    p_synth.add_argument("--out", required=True, help="output dataset directory")
    p_synth.set_defaults(func=_cmd_synth)

    p_stats = sub.add_parser("stats", help="pretty-print a run report")
    p_stats.add_argument("report", help="report.json from a run")
    p_stats.add_argument("--history", action="store_true")
    p_stats.set_defaults(func=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
