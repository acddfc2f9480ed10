"""Report figures: quality-vs-CRF curves, rate-quality scatter, and the
per-frame compute budget bar, rendered headless to image files."""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import BASELINE, MAC_BUDGET, SweepReport


def _done_rows(report: SweepReport) -> list:
    return [r for r in report.rows if r["status"] == "done"]


def _series(report: SweepReport, metric: str) -> dict:
    """method -> [(crf, mean over sources)], finite values only."""
    buckets = {}
    for row in _done_rows(report):
        value = row.get(metric)
        if value is None or not math.isfinite(value):
            continue
        buckets.setdefault(row["method"], {}).setdefault(
            row["crf"], []).append(value)
    return {
        method: sorted(
            (crf, sum(vals) / len(vals)) for crf, vals in by_crf.items()
        )
        for method, by_crf in buckets.items()
    }


def _curve_figure(report: SweepReport, metric: str, ylabel: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, points in sorted(_series(report, metric).items()):
        crfs = [p[0] for p in points]
        values = [p[1] for p in points]
        ax.plot(crfs, values, marker="o", label=method)
    ax.set_xlabel("CRF")
    ax.set_ylabel(ylabel)
    ax.set_title(f"{ylabel} vs CRF ({report.track})")
    ax.grid(True, alpha=0.3)
    if ax.lines:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def psnr_vs_crf(report: SweepReport, path) -> None:
    _curve_figure(report, "psnr_y", "PSNR-Y (dB)", path)


def ssim_vs_crf(report: SweepReport, path) -> None:
    _curve_figure(report, "ssim_y", "SSIM-Y", path)


def rate_quality(report: SweepReport, path) -> None:
    """Bitrate against PSNR-Y, one marker per finished cell."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_method = {}
    for row in _done_rows(report):
        rate, quality = row.get("bitrate_kbps"), row.get("psnr_y")
        if rate is None or quality is None or not math.isfinite(quality):
            continue
        by_method.setdefault(row["method"], []).append((rate, quality))
    for method, points in sorted(by_method.items()):
        ax.scatter([p[0] for p in points], [p[1] for p in points],
                   label=method)
    if by_method:
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no bitrate data (codec-free sweep)",
                ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("bitrate (kbps)")
    ax.set_ylabel("PSNR-Y (dB)")
    ax.set_title(f"rate vs quality ({report.track})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def complexity_budget(report: SweepReport, path) -> None:
    """Per-method GMACs per frame against the 250 G ceiling."""
    costs = {}
    for row in _done_rows(report):
        macs = row.get("macs_g_per_frame")
        if row["method"] != BASELINE and macs is not None:
            costs[row["method"]] = macs
    fig, ax = plt.subplots(figsize=(6, 4))
    if costs:
        methods = sorted(costs)
        ax.bar(methods, [costs[m] for m in methods])
        ax.tick_params(axis="x", rotation=20)
    else:
        ax.text(0.5, 0.5, "no model rows", ha="center", va="center",
                transform=ax.transAxes)
    budget_g = MAC_BUDGET / 1e9
    ax.axhline(budget_g, color="red", linestyle="--",
               label=f"budget {budget_g:.0f} G")
    ax.set_ylabel("GMACs per frame")
    ax.set_title(f"compute per frame ({report.track})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figures(report: SweepReport, out_dir) -> list:
    """Render the full figure set; returns the created file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = (
        ("psnr_vs_crf.png", psnr_vs_crf),
        ("ssim_vs_crf.png", ssim_vs_crf),
        ("rate_quality.png", rate_quality),
        ("complexity.png", complexity_budget),
    )
    paths = []
    for name, render in jobs:
        target = out_dir / name
        render(report, target)
        paths.append(target)
    return paths
