"""CRF sweep harness: downscale, encode, decode, upscale, score, report.

The encode and decode stages shell out to an external ffmpeg with pinned
flag strings; codec-free mode substitutes identity for both so the rest
of the pipeline stays testable without the tool.  Reports are JSON
documents persisted atomically after every finished cell, which makes
an interrupted sweep resumable: rows keyed by (source, crf, method,
tool_versions) are never recomputed.
"""

import csv
import io
import json
import math
import os
import platform
import shutil
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .frame_io import GeometryMismatch, parse_y4m_header, read_clip, save_clip
from .quality import score_clip
from .resample import LANCZOS5, scale_420_to
from .zoo import MAC_BUDGET, model_complexity, resolve, upscale_clip


class ToolNotFound(RuntimeError):
    """The external encoder binary is not on the path."""


class EncoderFailed(RuntimeError):
    """The external encoder exited nonzero; its log is retained."""


class MissingBaseline(LookupError):
    """A delta was requested against a baseline row that does not exist."""


BASELINE = "lanczos"
_BASELINE_ALIASES = (BASELINE, "lanczos_baseline")
DEFAULT_CRFS = (31, 39, 47, 55, 63)
CRF_MIN, CRF_MAX = 0, 63
REPORT_SCHEMA = 1

SCALE_FILTER = (
    "scale={w}:{h}:flags=lanczos+accurate_rnd+full_chroma_int"
    ":sws_dither=none:param0=5"
)
SVT_PARAMS = "preset=10:lookahead=0:keyint=-1:pred-struct=1"

COLUMNS = (
    "source",
    "crf",
    "method",
    "status",
    "error",
    "psnr_y",
    "ssim_y",
    "ms_ssim_y",
    "bitrate_kbps",
    "params",
    "macs_g_per_frame",
    "runtime_ms_per_frame",
    "tool_versions",
    "timestamp",
    "vmaf_cmd",
)
_INT_COLUMNS = frozenset({"crf", "params"})
_FLOAT_COLUMNS = frozenset(
    {
        "psnr_y",
        "ssim_y",
        "ms_ssim_y",
        "bitrate_kbps",
        "macs_g_per_frame",
        "runtime_ms_per_frame",
    }
)


@dataclass(frozen=True)
class Track:
    name: str
    scale: int
    lr_size: tuple


TRACKS = {
    "x3_mobile": Track("x3_mobile", 3, (640, 360)),
    "x4_general": Track("x4_general", 4, (960, 540)),
}


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: every (source, crf, method) cell of the grid."""

    sources: tuple
    track: str
    crfs: tuple = DEFAULT_CRFS
    methods: tuple = (BASELINE,)
    workdir: str = "sweep_work"
    report: str = "report.json"
    encoder: str = "ffmpeg"
    codec_free: bool = False
    lr_size: Optional[tuple] = None
    method_weights: Mapping = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if not self.sources:
            raise ValueError("sweep needs at least one source")
        if self.track not in TRACKS:
            raise ValueError(
                f"unknown track {self.track!r}; choose from "
                f"{', '.join(TRACKS)}"
            )
        object.__setattr__(self, "sources", tuple(str(s) for s in self.sources))
        object.__setattr__(self, "crfs", tuple(int(c) for c in self.crfs))
        for crf in self.crfs:
            if not CRF_MIN <= crf <= CRF_MAX:
                raise ValueError(f"crf {crf} outside [{CRF_MIN}, {CRF_MAX}]")
        scale = TRACKS[self.track].scale
        seen = []
        for method in self.methods:
            label = BASELINE if method in _BASELINE_ALIASES else method
            if label != BASELINE:
                model_id, _ = resolve(label)
                if model_id.scale != scale:
                    raise ValueError(
                        f"method {label!r} is a x{model_id.scale} model but "
                        f"track {self.track} upscales by {scale}"
                    )
                label = model_id.name
            if label not in seen:
                seen.append(label)
        object.__setattr__(self, "methods", tuple(seen))
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    @property
    def scale(self) -> int:
        return TRACKS[self.track].scale


def encoder_path(config: SweepConfig) -> str:
    """The encoder binary, with the environment override applied."""
    return os.environ.get("EVSR_FFMPEG", config.encoder)


def parse_size(text: str) -> tuple:
    """\"WxH\" -> (w, h)."""
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"geometry {text!r} is not of the form WxH")
    w, h = (int(p) for p in parts)
    if w < 2 or h < 2:
        raise ValueError(f"geometry {w}x{h} below the 2x2 minimum")
    return w, h


def load_sweep_config(path) -> SweepConfig:
    """Read a sweep description from a TOML file.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    known = {
        "sources", "track", "crfs", "methods", "workdir", "report",
        "encoder", "codec_free", "lr_size", "method_weights", "jobs",
    }
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown sweep config key {key!r}")
    base = path.parent

    def _resolve(p):
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    kwargs = {
        "sources": tuple(_resolve(s) for s in doc["sources"]),
        "track": doc["track"],
    }
    if "crfs" in doc:
        kwargs["crfs"] = tuple(doc["crfs"])
    if "methods" in doc:
        kwargs["methods"] = tuple(doc["methods"])
    kwargs["workdir"] = _resolve(doc.get("workdir", "sweep_work"))
    kwargs["report"] = _resolve(doc.get("report", "report.json"))
    if "encoder" in doc:
        kwargs["encoder"] = doc["encoder"]
    if "codec_free" in doc:
        kwargs["codec_free"] = bool(doc["codec_free"])
    if "lr_size" in doc:
        kwargs["lr_size"] = parse_size(doc["lr_size"])
    if "method_weights" in doc:
        kwargs["method_weights"] = {
            m: _resolve(p) for m, p in doc["method_weights"].items()
        }
    if "jobs" in doc:
        kwargs["jobs"] = int(doc["jobs"])
    return SweepConfig(**kwargs)


# ------------------------------------------------------------- encode jobs --

@dataclass
class EncodeJob:
    """One external encode: LR y4m in, AV1 bitstream out."""

    input: str
    output: str
    crf: int
    width: int
    height: int
    log: str
    status: str = "pending"
    decoded: str = ""

    def __post_init__(self):
        if not CRF_MIN <= self.crf <= CRF_MAX:
            raise ValueError(f"crf {self.crf} outside [{CRF_MIN}, {CRF_MAX}]")


def build_encode_command(job: EncodeJob, encoder: str = "ffmpeg") -> list:
    """The AV1 encode invocation, geometry and CRF substituted."""
    return [
        encoder,
        "-hide_banner",
        "-y",
        "-loglevel",
        "error",
        "-i",
        str(job.input),
        "-vf",
        SCALE_FILTER.format(w=job.width, h=job.height),
        "-c:v",
        "libsvtav1",
        "-svtav1-params",
        SVT_PARAMS,
        "-crf",
        str(job.crf),
        str(job.output),
    ]


def build_output_encode_command(input_path, output_path,
                                encoder: str = "ffmpeg") -> list:
    """Near-lossless x264 invocation for packaging upscaled clips."""
    parent = Path(output_path).parent
    if str(parent) not in ("", "."):
        parent.mkdir(parents=True, exist_ok=True)
    return [
        encoder,
        "-hide_banner",
        "-y",
        "-loglevel",
        "error",
        "-i",
        str(input_path),
        "-c:v",
        "libx264",
        "-preset",
        "veryfast",
        "-crf",
        "12",
        "-strict",
        "-2",
        str(output_path),
    ]


def build_decode_command(input_path, output_path,
                         encoder: str = "ffmpeg") -> list:
    return [
        encoder,
        "-hide_banner",
        "-y",
        "-loglevel",
        "error",
        "-i",
        str(input_path),
        "-pix_fmt",
        "yuv420p",
        "-f",
        "yuv4mpegpipe",
        str(output_path),
    ]


def vmaf_command(upscaled, original, log_path, encoder: str = "ffmpeg") -> str:
    """Ready-to-run libvmaf invocation for a finished row."""
    return (
        f"{encoder} -hide_banner -y -loglevel error -i {upscaled} "
        f"-i {original} -filter_complex "
        f"'libvmaf=feature=name=psnr|name=float_ssim"
        f":log_path={log_path}:log_fmt=xml' -f null -"
    )


def _run_logged(cmd: Sequence, log_path: str) -> int:
    with open(log_path, "ab") as log:
        proc = subprocess.run(list(cmd), stdout=log, stderr=subprocess.STDOUT)
    return proc.returncode


def run_stage(job: EncodeJob, encoder: str = "ffmpeg") -> str:
    """Encode then decode one job, verifying the decoded geometry.

    Metrics are never scraped from encoder output; the log file exists
    purely for post-mortems.
    """
    if shutil.which(encoder) is None:
        raise ToolNotFound(f"encoder binary {encoder!r} not found")
    job.status = "running"
    Path(job.log).write_bytes(b"")
    code = _run_logged(build_encode_command(job, encoder), job.log)
    if code != 0:
        job.status = "failed"
        raise EncoderFailed(f"encode exited {code}; log at {job.log}")
    decoded = job.output + ".y4m"
    code = _run_logged(build_decode_command(job.output, decoded, encoder),
                       job.log)
    if code != 0:
        job.status = "failed"
        raise EncoderFailed(f"decode exited {code}; log at {job.log}")
    with open(decoded, "rb") as fh:
        header = parse_y4m_header(fh)
    if (header.width, header.height) != (job.width, job.height):
        job.status = "failed"
        raise GeometryMismatch(
            f"decoded {header.width}x{header.height}, "
            f"expected {job.width}x{job.height}"
        )
    job.decoded = decoded
    job.status = "done"
    return job.status


def tool_versions(encoder: str, codec_free: bool) -> str:
    if codec_free:
        return "codec-free"
    if shutil.which(encoder) is None:
        raise ToolNotFound(f"encoder binary {encoder!r} not found")
    out = subprocess.run([encoder, "-version"], capture_output=True, text=True)
    first = (out.stdout or out.stderr).splitlines()
    return first[0].strip() if first else encoder


# ------------------------------------------------------------------ report --

@dataclass
class SweepReport:
    track: str
    rows: list = field(default_factory=list)
    schema: int = REPORT_SCHEMA
    machine: str = ""
    codec_free: bool = False

    def row_keys(self) -> set:
        return {_row_key(r) for r in self.rows}


def _row_key(row: Mapping) -> tuple:
    return (row["source"], row["crf"], row["method"], row["tool_versions"])


def _sort_rows(rows: list) -> list:
    return sorted(rows, key=lambda r: (r["source"], r["crf"], r["method"]))


def _json_value(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return round(value, 6)
    return value


def _from_json_value(column, value):
    if value is None or value == "":
        return None
    if value == "inf" and column in _FLOAT_COLUMNS:
        return math.inf
    if column in _INT_COLUMNS:
        return int(value)
    if column in _FLOAT_COLUMNS:
        return float(value)
    return value


def _ordered_row(row: Mapping) -> dict:
    return {col: _json_value(row.get(col)) for col in COLUMNS}


def emit_report(report: SweepReport, fmt: str = "json") -> bytes:
    """Serialize a report; column order is fixed across formats."""
    if fmt == "json":
        doc = {
            "schema": report.schema,
            "track": report.track,
            "machine": report.machine,
            "codec_free": report.codec_free,
            "rows": [_ordered_row(r) for r in _sort_rows(report.rows)],
        }
        return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        sink = io.StringIO()
        writer = csv.DictWriter(sink, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in _sort_rows(report.rows):
            writer.writerow({col: _csv_cell(row.get(col)) for col in COLUMNS})
        return sink.getvalue().encode("utf-8")
    if fmt == "markdown":
        return _markdown_report(report).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


def _md_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.6f}"
    return str(value)


def _markdown_report(report: SweepReport) -> str:
    mode = "codec-free" if report.codec_free else "external encoder"
    lines = [
        f"# Sweep report: {report.track}",
        "",
        f"Schema {report.schema}, {mode}, machine: {report.machine or 'n/a'}",
        "",
        "| method | source | crf | psnr_y | ssim_y | ms_ssim_y "
        "| bitrate_kbps | params | macs_g_per_frame | runtime_ms_per_frame |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    by_method = sorted(
        report.rows, key=lambda r: (r["method"], r["source"], r["crf"])
    )
    for row in by_method:
        cells = [
            row["method"],
            row["source"],
            str(row["crf"]),
            _md_cell(row.get("psnr_y")),
            _md_cell(row.get("ssim_y")),
            _md_cell(row.get("ms_ssim_y")),
            _md_cell(row.get("bitrate_kbps")),
            _md_cell(row.get("params")),
            _md_cell(row.get("macs_g_per_frame")),
            _md_cell(row.get("runtime_ms_per_frame")),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def load_report(path) -> SweepReport:
    """Read a persisted JSON report back into memory."""
    with open(path, "rb") as fh:
        doc = json.loads(fh.read().decode("utf-8"))
    rows = [
        {col: _from_json_value(col, row.get(col)) for col in COLUMNS}
        for row in doc.get("rows", ())
    ]
    return SweepReport(
        track=doc.get("track", ""),
        rows=rows,
        schema=doc.get("schema", REPORT_SCHEMA),
        machine=doc.get("machine", ""),
        codec_free=bool(doc.get("codec_free", False)),
    )


def load_report_csv(data: bytes, track: str = "") -> SweepReport:
    """Parse CSV bytes produced by emit_report back into a report."""
    reader = csv.DictReader(io.StringIO(data.decode("utf-8")))
    rows = [
        {col: _from_json_value(col, row.get(col)) for col in COLUMNS}
        for row in reader
    ]
    return SweepReport(track=track, rows=rows)


def _persist(report: SweepReport, path) -> None:
    # Temp-then-rename so a crash can never leave a torn report behind.
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(emit_report(report, "json"))
    os.replace(tmp, path)


# ------------------------------------------------------------------- sweep --

@dataclass(frozen=True)
class _SourceContext:
    path: str
    width: int
    height: int
    fps: tuple
    frames: tuple
    lr_path: str
    lr_frames: tuple
    lr_size: tuple


def _prepare_source(config: SweepConfig, workdir: Path,
                    source: str) -> _SourceContext:
    header, frames = read_clip(source)
    scale = config.scale
    if config.lr_size is not None:
        lw, lh = config.lr_size
    else:
        if header.width % scale or header.height % scale:
            raise ValueError(
                f"source {source} is {header.width}x{header.height}, not "
                f"divisible by {scale}; set lr_size explicitly"
            )
        lw, lh = header.width // scale, header.height // scale
    has_model = any(m != BASELINE for m in config.methods)
    if has_model and (lw * scale, lh * scale) != (header.width, header.height):
        raise ValueError(
            f"lr geometry {lw}x{lh} times {scale} does not recover the "
            f"{header.width}x{header.height} source; model outputs could "
            "never be scored"
        )
    lr_frames = tuple(scale_420_to(f, lw, lh, LANCZOS5) for f in frames)
    lr_path = workdir / f"{Path(source).stem}_lr_{lw}x{lh}.y4m"
    save_clip(lr_path, list(lr_frames), fps=(header.fps_num, header.fps_den))
    return _SourceContext(
        path=source,
        width=header.width,
        height=header.height,
        fps=(header.fps_num, header.fps_den),
        frames=tuple(frames),
        lr_path=str(lr_path),
        lr_frames=lr_frames,
        lr_size=(lw, lh),
    )


def _check_budget(config: SweepConfig, lr_size: tuple) -> None:
    for method in config.methods:
        if method == BASELINE:
            continue
        info = model_complexity(method, lr_size=lr_size)
        if not info["within_budget"]:
            raise ValueError(
                f"method {method!r} needs {info['macs'] / 1e9:.1f} GMACs "
                f"per frame at {lr_size[0]}x{lr_size[1]}, over the "
                f"{MAC_BUDGET / 1e9:.0f} G budget"
            )


def _decode_cell(ctx: _SourceContext, config: SweepConfig, workdir: Path,
                 crf: int, codec_free: bool, encoder: str):
    """Encode+decode one (source, crf); identity in codec-free mode.

    Returns (decoded frames, bitrate_kbps or None).
    """
    if codec_free:
        return ctx.lr_frames, None
    stem = Path(ctx.path).stem
    out = workdir / f"{stem}_crf{crf}.mkv"
    job = EncodeJob(
        input=ctx.lr_path,
        output=str(out),
        crf=crf,
        width=ctx.lr_size[0],
        height=ctx.lr_size[1],
        log=str(out) + ".log",
    )
    run_stage(job, encoder)
    _, decoded = read_clip(job.decoded)
    if len(decoded) != len(ctx.frames):
        raise GeometryMismatch(
            f"decoded {len(decoded)} frames, expected {len(ctx.frames)}"
        )
    duration = len(decoded) * ctx.fps[1] / ctx.fps[0]
    bitrate = os.path.getsize(out) * 8 / 1000 / duration
    return tuple(decoded), bitrate


def _upscale_method(method: str, config: SweepConfig, ctx: _SourceContext,
                    frames) -> list:
    if method == BASELINE:
        return [scale_420_to(f, ctx.width, ctx.height, LANCZOS5)
                for f in frames]
    weights = config.method_weights.get(method)
    return upscale_clip(method, weights, list(frames))


def _method_rows(config: SweepConfig, ctx: _SourceContext, workdir: Path,
                 crf: int, methods: Sequence, codec_free: bool,
                 encoder: str, versions: str) -> list:
    base = {
        "source": ctx.path,
        "crf": crf,
        "tool_versions": versions,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    try:
        frames, bitrate = _decode_cell(ctx, config, workdir, crf,
                                       codec_free, encoder)
    except Exception as exc:  # recorded per row, the sweep keeps going
        return [
            {**base, "method": m, "status": "failed", "error": str(exc)}
            for m in methods
        ]
    rows = []
    stem = Path(ctx.path).stem
    for method in methods:
        row = {**base, "method": method}
        try:
            started = time.perf_counter()
            upscaled = _upscale_method(method, config, ctx, frames)
            elapsed_ms = (time.perf_counter() - started) * 1000
            up_path = workdir / f"{stem}_crf{crf}_{method}.y4m"
            save_clip(up_path, upscaled, fps=ctx.fps)
            score = score_clip(list(ctx.frames), upscaled)
            if method == BASELINE:
                params = macs_g = None
            else:
                info = model_complexity(method, lr_size=ctx.lr_size)
                params = info["params"]
                macs_g = info["macs"] / 1e9
            row.update(
                status="done",
                error=None,
                psnr_y=score.psnr_y,
                ssim_y=score.ssim_y,
                ms_ssim_y=score.ms_ssim_y,
                bitrate_kbps=bitrate,
                params=params,
                macs_g_per_frame=macs_g,
                runtime_ms_per_frame=elapsed_ms / max(len(frames), 1),
                vmaf_cmd=vmaf_command(up_path, ctx.path,
                                      str(up_path) + ".vmaf.xml"),
            )
        except Exception as exc:
            row.update(status="failed", error=str(exc))
        rows.append(row)
    return rows


def crf_sweep(config: SweepConfig) -> SweepReport:
    """Run the whole grid, resuming from an existing report if present."""
    encoder = encoder_path(config)
    codec_free = config.codec_free
    if not codec_free and shutil.which(encoder) is None:
        # No tool, no bitstreams: drop to identity encode/decode rather
        # than failing a metrics-only run.
        codec_free = True
    versions = tool_versions(encoder, codec_free)

    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    report_path = Path(config.report)
    if report_path.exists():
        report = load_report(report_path)
        if report.track != config.track:
            raise ValueError(
                f"existing report is for track {report.track!r}, "
                f"not {config.track!r}"
            )
    else:
        report = SweepReport(track=config.track)
    report.machine = report.machine or platform.platform()
    report.codec_free = codec_free

    contexts = {}
    for source in config.sources:
        ctx = _prepare_source(config, workdir, source)
        _check_budget(config, ctx.lr_size)
        contexts[source] = ctx

    # Rows from an older tool generation get recomputed, not duplicated.
    grid = {(s, c, m) for s in config.sources for c in config.crfs
            for m in config.methods}
    report.rows = [
        r for r in report.rows
        if r["tool_versions"] == versions
        or (r["source"], r["crf"], r["method"]) not in grid
    ]
    have = report.row_keys()
    cells = []
    for source in config.sources:
        for crf in config.crfs:
            todo = [
                m for m in config.methods
                if (source, crf, m, versions) not in have
            ]
            if todo:
                cells.append((source, crf, tuple(todo)))

    def _run_cell(cell):
        source, crf, methods = cell
        return _method_rows(config, contexts[source], workdir, crf,
                            methods, codec_free, encoder, versions)

    if cells:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(_run_cell, cell) for cell in cells]
            for future in as_completed(futures):
                report.rows.extend(future.result())
                report.rows = _sort_rows(report.rows)
                _persist(report, report_path)
    else:
        _persist(report, report_path)
    report.rows = _sort_rows(report.rows)
    return report


# ---------------------------------------------------------------- baselines --

_DELTA_METRICS = ("psnr_y", "ssim_y", "ms_ssim_y")


def _delta(method_value, base_value):
    if method_value is None or base_value is None:
        return None
    if method_value == base_value:  # covers the inf-vs-inf corner
        return 0.0
    return method_value - base_value


def compare_baseline(report: SweepReport) -> dict:
    """Per-cell metric deltas against the lanczos rows, plus means."""
    done = [r for r in report.rows if r["status"] == "done"]
    baselines = {
        (r["source"], r["crf"]): r for r in done if r["method"] == BASELINE
    }
    cells = []
    for row in done:
        key = (row["source"], row["crf"])
        base = baselines.get(key)
        if base is None:
            raise MissingBaseline(
                f"no {BASELINE} row for source={key[0]!r} crf={key[1]}"
            )
        cell = {"source": key[0], "crf": key[1], "method": row["method"]}
        for metric in _DELTA_METRICS:
            cell[metric + "_delta"] = _delta(row.get(metric),
                                             base.get(metric))
        cells.append(cell)

    def _mean(values):
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    per_crf = {}
    overall = {}
    for cell in cells:
        per_crf.setdefault(cell["crf"], {}).setdefault(
            cell["method"], []).append(cell)
        overall.setdefault(cell["method"], []).append(cell)

    def _aggregate(groups):
        return {
            label: {
                metric + "_delta": _mean(
                    [c[metric + "_delta"] for c in group]
                )
                for metric in _DELTA_METRICS
            }
            for label, group in groups.items()
        }

    return {
        "cells": cells,
        "per_crf": {crf: _aggregate(methods)
                    for crf, methods in per_crf.items()},
        "overall": _aggregate(overall),
    }
