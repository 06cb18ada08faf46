"""Command-line front end.

Subcommands: synth (render a scene tree), run (speeds + gate for one video),
eval (RMSE report over a dataset), compare-filters (eval with the standard
filter set), correlate (windowed correlation), bench (per-stage timings).
All outputs are CSV with the effective configuration embedded in every row;
re-running a command with identical inputs rewrites byte-identical files.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import formats, pipeline, synth
from .errors import OpphError
from .filters import FilterSpec
from .metrics import speed_histogram
from .types import OpphConfig, default_config

DEFAULT_FILTERS = ("median:3", "bilateral:3,1", "tv:0.1,100", "kalman:0.0001,0.01")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file with theta/n/m/min_active_pixels defaults")
    p.add_argument("--theta", type=int, default=None, help="intensity threshold (0-255)")
    p.add_argument("--n", type=int, default=None, help="spatial median window side (odd)")
    p.add_argument("--m", type=int, default=None, help="temporal median window (frames)")
    p.add_argument("--min-active-pixels", type=int, default=None,
                   help="pixels required to flag movement (default 1)")


def _add_flow_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--flow-levels", type=int, default=3, help="pyramid levels")
    p.add_argument("--flow-window", type=int, default=15, help="least-squares window side")
    p.add_argument("--flow-iters", type=int, default=3, help="iterations per level")
    p.add_argument("--flow-tol", type=float, default=1e-3,
                   help="stop iterating below this mean per-pixel update")


def _resolve_config(args, width: int, height: int, fps: float) -> OpphConfig:
    """CLI flag > config file > size-derived default."""
    base = default_config(width, height, fps)
    values = {
        "theta": base.theta, "n": base.n, "m": base.m,
        "min_active_pixels": base.min_active_pixels,
    }
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise OpphError(f"config file {args.config}: {exc}") from exc
        for key in values:
            if key in loaded:
                values[key] = loaded[key]
    for key in values:
        arg = getattr(args, key)
        if arg is not None:
            values[key] = arg
    return OpphConfig(**values)


def _flow_params(args) -> pipeline.FlowParams:
    return pipeline.FlowParams(
        levels=args.flow_levels, window=args.flow_window, iters=args.flow_iters,
        tol=args.flow_tol,
    )


def _config_dict(cfg: OpphConfig, source: str, extra: dict | None = None) -> dict:
    out = {
        "theta": cfg.theta, "n": cfg.n, "m": cfg.m,
        "min_active_pixels": cfg.min_active_pixels, "source": source,
    }
    if extra:
        out.update(extra)
    return out


def _load_sequences(paths, need_frames=True) -> list[pipeline.Sequence]:
    return [pipeline.load_sequence(formats.load_manifest(p), need_frames) for p in paths]


def _first_frame_geometry(seq: pipeline.Sequence) -> tuple[int, int, float]:
    if seq.frames:
        return seq.frames[0].width, seq.frames[0].height, seq.fps
    if seq.flows is not None and len(seq.flows):
        f = seq.flows[0]
        return f.width, f.height, seq.fps
    raise OpphError(f"sequence {seq.identifier}: cannot determine frame geometry")


def cmd_synth(args) -> int:
    spec = synth.scene_from_dict(json.loads(Path(args.spec).read_text()))
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    frames, gt_flow, masks, gt_speed = synth.generate(spec)

    ext = args.image_format
    frame_files, mask_files, flow_files = [], [], []
    for t, frame in enumerate(frames):
        rel = f"frames/frame_{t:05d}.{ext}"
        _write_image(out / rel, frame.pixels, ext)
        frame_files.append(rel)
    for t, mask in enumerate(masks):
        rel = f"masks/mask_{t:05d}.{'pgm' if ext == 'ppm' else ext}"
        _write_image(out / rel, mask.values * 255, ext)
        mask_files.append(rel)
    if not args.skip_flows:
        (out / "flows").mkdir(exist_ok=True)
        for t in range(len(gt_flow)):
            rel = f"flows/flow_{t:05d}.flo"
            (out / rel).write_bytes(formats.write_flo(gt_flow[t]))
            flow_files.append(rel)
    formats.write_gt_speed(gt_speed, out / "gt_speed.csv")
    manifest = formats.SequenceManifest(
        identifier=spec.identifier, fps=spec.fps,
        frames=tuple(frame_files), masks=tuple(mask_files), flows=tuple(flow_files),
        gt_speed="gt_speed.csv", root=out,
    )
    formats.save_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(frames)} frames to {out}", file=sys.stderr)
    return 0


def _write_image(path: Path, arr: np.ndarray, ext: str) -> None:
    if ext == "ppm":
        formats.write_pnm(path, arr)
    else:
        from PIL import Image

        Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")


def cmd_run(args) -> int:
    seq = pipeline.load_sequence(formats.load_manifest(args.manifest))
    width, height, fps = _first_frame_geometry(seq)
    cfg = _resolve_config(args, width, height, fps)
    result = pipeline.run_sequence(
        seq, args.source, cfg, _flow_params(args),
        with_opph=not args.no_opph, stream=args.stream,
    )
    conf = _config_dict(cfg, args.source, {"stream": int(args.stream)})
    formats.write_speeds_csv(args.out_speeds, result.raw, result.gated, conf)
    if args.out_gate:
        if result.gate is None:
            raise OpphError("--out-gate requires the gate (drop --no-opph)")
        formats.write_gate_csv(args.out_gate, result.gate.s, result.gate.s_filtered, conf)
    if args.histogram:
        series = result.gated if result.gated is not None else result.raw
        bins = speed_histogram(series, args.hist_bin_width, args.hist_max)
        formats.write_histogram_csv(args.histogram, bins, conf)
    return 0


def _eval_filters(args) -> tuple[FilterSpec, ...]:
    return tuple(FilterSpec.parse(s) for s in (args.filters or ()))


def cmd_eval(args) -> int:
    seqs = _load_sequences(args.manifests)
    width, height, fps = _first_frame_geometry(seqs[0])
    cfg = _resolve_config(args, width, height, fps)
    filters = _eval_filters(args)
    reports = pipeline.evaluate_dataset(
        seqs, args.source, cfg, _flow_params(args), filters,
        with_opph=not args.no_opph, jobs=args.jobs,
    )
    conf = _config_dict(cfg, args.source,
                        {"filters": ";".join(f.label() for f in filters)})
    formats.write_report_csv(args.out, reports, conf)
    return 0


def cmd_correlate(args) -> int:
    seqs = _load_sequences(args.manifests)
    width, height, fps = _first_frame_geometry(seqs[0])
    cfg = _resolve_config(args, width, height, fps)
    try:
        reports = pipeline.correlate_dataset(
            seqs, args.source, args.windows, cfg, _flow_params(args),
            with_opph=not args.no_opph, jobs=args.jobs,
        )
    except OpphError as exc:
        total = sum(len(s.gt_speed) if s.gt_speed else 0 for s in seqs)
        shortest = max(1, total // 2) / fps
        raise OpphError(f"{exc} (longest admissible window: {shortest:g}s)") from exc
    conf = _config_dict(cfg, args.source)
    formats.write_correlation_csv(args.out, reports, conf)
    return 0


def cmd_bench(args) -> int:
    report = pipeline.bench_stages(args.width, args.height, args.frames)
    lines = [f"{stage},{ms:.4f}" for stage, ms in report.items()]
    text = "stage,ms_per_frame\n" + "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    budget = 15.0
    if report["total"] > budget and args.width * args.height >= 640 * 480:
        print(f"warning: total {report['total']:.2f} ms exceeds the {budget:.0f} ms "
              "per-frame budget on this machine", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opph",
                                     description="Body-motion speed gating and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene to a manifest tree")
    p.add_argument("--spec", required=True, type=Path, help="scene JSON file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--image-format", choices=("ppm", "png"), default="ppm")
    p.add_argument("--skip-flows", action="store_true", help="do not write .flo files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="speeds and gate for one sequence")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--source", choices=pipeline.SOURCES, default="builtin-flow")
    p.add_argument("--out-speeds", required=True, type=Path)
    p.add_argument("--out-gate", type=Path, default=None)
    p.add_argument("--no-opph", action="store_true", help="emit raw speeds only")
    p.add_argument("--stream", action="store_true",
                   help="causal temporal median (floor(m/2)-frame delay)")
    p.add_argument("--histogram", type=Path, default=None, help="speed histogram CSV")
    p.add_argument("--hist-bin-width", type=float, default=0.1)
    p.add_argument("--hist-max", type=float, default=10.0)
    _add_config_args(p)
    _add_flow_args(p)
    p.set_defaults(func=cmd_run)

    for name, help_text in (("eval", "RMSE report over a dataset"),
                            ("compare-filters", "eval with the standard filter set")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifests", required=True, nargs="+", type=Path)
        p.add_argument("--source", choices=pipeline.SOURCES, default="builtin-flow")
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--filters", nargs="*",
                       default=list(DEFAULT_FILTERS) if name == "compare-filters" else [],
                       help="filter specs like median:3 bilateral:3,1 tv:0.1,100 kalman:1e-4,1e-2")
        p.add_argument("--no-opph", action="store_true")
        p.add_argument("--jobs", type=int, default=1, help="videos processed in parallel")
        _add_config_args(p)
        _add_flow_args(p)
        p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correlate", help="windowed correlation against ground truth")
    p.add_argument("--manifests", required=True, nargs="+", type=Path)
    p.add_argument("--source", choices=pipeline.SOURCES, default="builtin-flow")
    p.add_argument("--windows", required=True, nargs="+", type=float,
                   help="window lengths in seconds")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-opph", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_args(p)
    _add_flow_args(p)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("bench", help="per-stage gate timings")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--frames", type=int, default=110)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OpphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
