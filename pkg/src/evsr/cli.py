"""The `evsr` command line: scaling, model inference, branch fusion,
metrics, CRF sweeps, and report rendering."""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (
    REPORT_SCHEMA,
    crf_sweep,
    emit_report,
    load_report,
    load_sweep_config,
    parse_size,
)
from .figures import render_report_figures
from .frame_io import read_clip, read_yuv_clip, save_clip, write_yuv_clip
from .nn_core import run_graph, save_weights
from .quality import score_clip
from .reparam import fuse_graph
from .resample import FilterSpec, downscale_420, upscale_420
from .zoo import (
    _input_shapes,
    model_complexity,
    prepare_weights,
    resolve,
    upscale_clip,
)

_FUSE_TOLERANCE = 1e-4
_FUSE_CHECK_SIZE = (32, 20)


def _parse_fps(text: str) -> tuple:
    num, _, den = str(text).partition(":")
    return int(num), int(den) if den else 1


def _read_input(parser, path, size, fps):
    """Load a clip; raw planar .yuv needs explicit geometry."""
    if str(path).endswith(".yuv"):
        if size is None:
            parser.error("raw .yuv input needs --size WxH")
        w, h = parse_size(size)
        return read_yuv_clip(path, w, h, fps=_parse_fps(fps))
    return read_clip(path)


def _write_output(path, frames, fps) -> None:
    if str(path).endswith(".yuv"):
        write_yuv_clip(path, frames)
    else:
        save_clip(path, frames, fps=fps)


def _json6(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return round(value, 6)
    return value


# ------------------------------------------------------------- subcommands --

def _cmd_downscale(parser, args):
    spec = FilterSpec.parse(args.filter)
    header, frames = _read_input(parser, args.infile, args.size, args.fps)
    out = [downscale_420(f, args.factor, spec) for f in frames]
    _write_output(args.out, out, (header.fps_num, header.fps_den))
    print(f"{len(out)} frames -> {args.out}")
    return 0


def _cmd_upscale(parser, args):
    header, frames = _read_input(parser, args.infile, args.size, args.fps)
    if args.model is not None:
        if args.factor is not None:
            parser.error("--factor comes from the model; drop one of them")
        out = upscale_clip(args.model, args.weights, frames)
    else:
        if args.factor is None:
            parser.error("--filter upscaling needs --factor")
        if args.weights is not None:
            parser.error("--weights only applies to --model")
        spec = FilterSpec.parse(args.filter)
        out = [upscale_420(f, args.factor, spec) for f in frames]
    _write_output(args.out, out, (header.fps_num, header.fps_den))
    print(f"{len(out)} frames -> {args.out}")
    return 0


def _cmd_analyze(parser, args):
    lr_size = parse_size(args.res) if args.res else None
    info = model_complexity(args.model, lr_size=lr_size)
    verdict = ("within 250 G budget" if info["within_budget"]
               else "OVER the 250 G budget")
    print(f"model: {info['model']} (x{info['scale']})")
    print(f"input: {info['input'][0]}x{info['input'][1]}")
    print(f"params: {info['params']} ({info['params'] / 1e6:.3f} M)")
    print(f"macs_per_frame: {info['macs']} ({info['macs'] / 1e9:.3f} G)")
    print(
        "macs_per_output_pixel: "
        f"{info['macs_per_output_pixel']:.1f} "
        f"({info['macs_per_output_pixel'] / 1e3:.3f} K)"
    )
    print(f"budget: {verdict}")
    return 0


def _cmd_fuse(parser, args):
    model_id, entry = resolve(args.model)
    graph = entry.build()
    weighted = replace(graph, weights=prepare_weights(graph, args.infile))
    fused = fuse_graph(weighted)

    shapes = _input_shapes(entry, *_FUSE_CHECK_SIZE)
    if not isinstance(shapes, dict):
        shapes = {weighted.inputs[0]: shapes}
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(2):
        feed = {
            name: rng.uniform(-1, 1, shape).astype(np.float32)
            for name, shape in shapes.items()
        }
        want = run_graph(weighted, feed)
        got = run_graph(fused, feed)
        for key in want:
            worst = max(worst, float(np.abs(want[key] - got[key]).max()))
    if worst > _FUSE_TOLERANCE:
        print(
            f"evsr: fusion self-check failed: max divergence {worst:.3e} "
            f"exceeds {_FUSE_TOLERANCE:.0e}",
            file=sys.stderr,
        )
        return 1
    written = save_weights(args.out, fused.weights)
    print(
        f"{model_id}: {len(fused.weights)} tensors, {written} bytes, "
        f"max divergence {worst:.3e} -> {args.out}"
    )
    return 0


def _cmd_metrics(parser, args):
    _, ref = read_clip(args.ref)
    _, dist = read_clip(args.dist)
    score = score_clip(ref, dist)
    frames = []
    if args.per_frame:
        frames = [
            {
                "psnr_y": _json6(f.psnr_y),
                "ssim_y": _json6(f.ssim_y),
                "ms_ssim_y": _json6(f.ms_ssim_y),
            }
            for f in score.frames
        ]
    doc = {
        "clip": {
            "psnr_y": _json6(score.psnr_y),
            "ssim_y": _json6(score.ssim_y),
            "ms_ssim_y": _json6(score.ms_ssim_y),
            "inf_psnr_frames": score.inf_psnr_frames,
        },
        "frames": frames,
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    print(
        f"psnr_y={doc['clip']['psnr_y']} ssim_y={doc['clip']['ssim_y']} "
        f"ms_ssim_y={doc['clip']['ms_ssim_y']} -> {args.out}"
    )
    return 0


def _cmd_sweep(parser, args):
    config = load_sweep_config(args.config)
    updates = {}
    if args.codec_free:
        updates["codec_free"] = True
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if updates:
        config = replace(config, **updates)
    report = crf_sweep(config)
    failed = sum(1 for r in report.rows if r["status"] != "done")
    note = f" ({failed} failed)" if failed else ""
    print(f"{len(report.rows)} rows{note} -> {config.report}")
    return 0


_FORMAT_EXT = {"json": "json", "csv": "csv", "markdown": "md"}


def _cmd_report(parser, args):
    report = load_report(args.report)
    if report.schema != REPORT_SCHEMA:
        parser.error(f"unsupported report schema {report.schema}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    for fmt in args.formats.split(","):
        fmt = fmt.strip()
        if fmt not in _FORMAT_EXT:
            parser.error(f"unknown report format {fmt!r}")
        target = out_dir / f"report.{_FORMAT_EXT[fmt]}"
        target.write_bytes(emit_report(report, fmt))
        created.append(target)
    if not args.no_figures:
        created.extend(render_report_figures(report, out_dir))
    for path in created:
        print(path)
    return 0


# ------------------------------------------------------------------ parser --

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evsr",
        description="Efficient video super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def _io_args(p, raw_input=True):
        p.add_argument("--in", dest="infile", required=True,
                       help="input clip (.y4m, or raw .yuv with --size)")
        p.add_argument("--out", required=True,
                       help="output clip (.y4m or raw .yuv)")
        if raw_input:
            p.add_argument("--size", help="raw input geometry, WxH")
            p.add_argument("--fps", default="25",
                           help="raw input frame rate, N or N:D")

    down = sub.add_parser("downscale", help="shrink a clip by 2/3/4")
    _io_args(down)
    down.add_argument("--factor", type=int, choices=(2, 3, 4), required=True)
    down.add_argument("--filter", default="lanczos:5",
                      help="lanczos[:a] | bicubic | nearest")
    down.set_defaults(func=_cmd_downscale)

    up = sub.add_parser("upscale", help="enlarge a clip by filter or model")
    _io_args(up)
    up.add_argument("--factor", type=int, choices=(2, 3, 4))
    group = up.add_mutually_exclusive_group()
    group.add_argument("--filter", default=None,
                       help="lanczos[:a] | bicubic | nearest")
    group.add_argument("--model", help="model name, e.g. etdsv2")
    up.add_argument("--weights", help="weights container for --model")
    up.set_defaults(func=_cmd_upscale, filter_default="lanczos:5")

    analyze = sub.add_parser("analyze",
                             help="params / MACs / budget for a model")
    analyze.add_argument("--model", required=True)
    analyze.add_argument("--res", help="LR input geometry WxH "
                                       "(track default when omitted)")
    analyze.set_defaults(func=_cmd_analyze)

    fuse = sub.add_parser("fuse",
                          help="fuse training branches into deploy weights")
    fuse.add_argument("--model", required=True)
    fuse.add_argument("--in", dest="infile", required=True,
                      help="training-form weights (.evsrw)")
    fuse.add_argument("--out", required=True,
                      help="fused weights (.evsrw)")
    fuse.set_defaults(func=_cmd_fuse)

    metrics = sub.add_parser("metrics", help="score a clip against a reference")
    metrics.add_argument("--ref", required=True)
    metrics.add_argument("--dist", required=True)
    metrics.add_argument("--out", required=True, help="JSON report path")
    metrics.add_argument("--per-frame", action="store_true")
    metrics.set_defaults(func=_cmd_metrics)

    sweep = sub.add_parser("sweep", help="run a CRF sweep from a TOML config")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--codec-free", action="store_true",
                       help="identity encode/decode, no external tool")
    sweep.add_argument("--jobs", type=int)
    sweep.set_defaults(func=_cmd_sweep)

    report = sub.add_parser("report",
                            help="render a sweep report and its figures")
    report.add_argument("--report", required=True)
    report.add_argument("--out-dir", required=True)
    report.add_argument("--formats", default="json,csv,markdown")
    report.add_argument("--no-figures", action="store_true")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is _cmd_upscale and args.filter is None \
            and args.model is None:
        args.filter = args.filter_default
    try:
        return args.func(parser, args)
    except Exception as exc:  # uniform error surface for scripts
        print(f"evsr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
