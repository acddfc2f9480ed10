"""Classical separable resampling: Lanczos, Catmull-Rom bicubic, nearest.

Coordinate convention is center-aligned: output pixel ``dst`` samples the
source at ``src = (dst + 0.5) * (in_size / out_size) - 0.5``.  When
downscaling, kernels are stretched by the scale factor (standard area-aware
filtering); weights are normalized to sum 1 per output pixel and source
indices are clamped at the borders (edge replication).

Quantization back to 8 bits happens once, at the plane boundary:
round half away from zero, then clamp to [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .frame_io import Frame420, chroma_dims


class OutputTooSmall(ValueError):
    """Requested geometry would drop below the 2x2 frame minimum."""


@dataclass(frozen=True)
class FilterSpec:
    """Resampling filter selector.

    kind: one of "lanczos", "bicubic", "nearest".
    taps: Lanczos window parameter a (ignored by the other kinds).
          a=3 is the toolkit default; a=5 mirrors the ffmpeg `param0=5` usage.
    """

    kind: str = "lanczos"
    taps: int = 3

    def __post_init__(self):
        if self.kind not in ("lanczos", "bicubic", "nearest"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "lanczos" and not 2 <= self.taps <= 8:
            raise ValueError(f"lanczos window a={self.taps} outside 2..8")

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        """Parse CLI syntax: "lanczos", "lanczos:5", "bicubic", "nearest"."""
        kind, _, arg = text.partition(":")
        if kind == "lanczos":
            return cls(kind="lanczos", taps=int(arg) if arg else 3)
        if arg:
            raise ValueError(f"filter {kind!r} takes no parameter")
        return cls(kind=kind)

    @property
    def support(self) -> float:
        """Kernel half-width at unit scale."""
        if self.kind == "lanczos":
            return float(self.taps)
        if self.kind == "bicubic":
            return 2.0
        return 0.5  # nearest: pick the closest sample


LANCZOS5 = FilterSpec(kind="lanczos", taps=5)
BICUBIC = FilterSpec(kind="bicubic")
NEAREST = FilterSpec(kind="nearest")


def lanczos_kernel(x: float, a: int) -> float:
    """sinc(x) * sinc(x/a) for |x| < a, else 0; exact zeros at the integers."""
    if abs(x) >= a:
        return 0.0
    if x == math.floor(x):
        return 1.0 if x == 0 else 0.0
    px = math.pi * x
    return a * math.sin(px) * math.sin(px / a) / (px * px)


def bicubic_kernel(x: float) -> float:
    """Catmull-Rom cubic (B=0, C=0.5); interpolating: delta at the integers."""
    x = abs(x)
    if x < 1.0:
        return (1.5 * x - 2.5) * x * x + 1.0
    if x < 2.0:
        return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    return 0.0


def _lanczos_weights(x: np.ndarray, a: int) -> np.ndarray:
    """Vectorized lanczos_kernel with the same exact integer zeros."""
    out = np.zeros_like(x)
    frac = x != np.floor(x)
    px = math.pi * x[frac]
    out[frac] = a * np.sin(px) * np.sin(px / a) / (px * px)
    out[x == 0.0] = 1.0
    out[np.abs(x) >= a] = 0.0
    return out


def _bicubic_weights(x: np.ndarray) -> np.ndarray:
    x = np.abs(x)
    near = (1.5 * x - 2.5) * x * x + 1.0
    far = ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    return np.where(x < 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=128)
def _filter_bank(in_size: int, out_size: int, spec: FilterSpec):
    """Per-output-pixel sample indices and normalized weights for one axis.

    Returns (indices, weights, centers): integer array (out, taps), float64
    weight array of the same shape summing to 1 per row, and the clamped
    nearest-sample index per output pixel.  Cached; callers must not mutate
    the returned arrays.
    """
    scale = in_size / out_size
    stretch = max(scale, 1.0)  # widen the kernel when minifying
    support = spec.support * stretch

    dst = np.arange(out_size, dtype=np.float64)
    src = (dst + 0.5) * scale - 0.5
    centers = np.clip(np.floor(src + 0.5).astype(np.int64), 0, in_size - 1)
    if spec.kind == "nearest":
        # Single tap: the unit box never spans two samples.  Ties at +-0.5 go
        # to the right neighbor (round-half-up on the source position).
        return centers[:, None], np.ones((out_size, 1), dtype=np.float64), centers

    first = np.ceil(src - support).astype(np.int64)
    n_taps = int(math.floor(2.0 * support)) + 1
    positions = first[:, None] + np.arange(n_taps, dtype=np.int64)[None, :]

    rel = (positions - src[:, None]) / stretch
    if spec.kind == "lanczos":
        weights = _lanczos_weights(rel, spec.taps)
    else:
        weights = _bicubic_weights(rel)
    weights /= weights.sum(axis=1, keepdims=True)

    indices = np.clip(positions, 0, in_size - 1)
    return indices, weights, centers


def _resample_axis(plane: np.ndarray, out_size: int, spec: FilterSpec) -> np.ndarray:
    """Resample along the last axis.

    The weighted sum is evaluated as center + sum(w * (sample - center)), which
    is algebraically identical (weights sum to 1) but keeps constant regions
    exactly constant regardless of floating-point rounding.
    """
    indices, weights, centers = _filter_bank(plane.shape[-1], out_size, spec)
    gathered = plane[..., indices]            # (..., out, taps)
    center = plane[..., centers]              # (..., out)
    w = weights.astype(plane.dtype, copy=False)
    return center + ((gathered - center[..., None]) * w).sum(axis=-1)


def resample_plane(plane: np.ndarray, out_w: int, out_h: int,
                   spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Separable resampling of a 2-D plane to out_w x out_h (float output)."""
    if out_w < 1 or out_h < 1:
        raise OutputTooSmall(f"target {out_w}x{out_h} must be at least 1x1")
    work = np.asarray(plane, dtype=np.float32)
    work = _resample_axis(work, out_w, spec)                    # horizontal
    work = _resample_axis(work.swapaxes(-1, -2), out_h, spec)   # vertical
    return work.swapaxes(-1, -2)


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255], return uint8."""
    rounded = np.copysign(np.floor(np.abs(values) + 0.5), values)
    return np.clip(rounded, 0.0, 255.0).astype(np.uint8)


def _scale_frame(frame: Frame420, out_w: int, out_h: int,
                 spec: FilterSpec) -> Frame420:
    if out_w < 2 or out_h < 2:
        raise OutputTooSmall(f"luma target {out_w}x{out_h} below the 2x2 minimum")
    ch, cw = chroma_dims(out_w, out_h)
    return Frame420(
        y=quantize_u8(resample_plane(frame.y, out_w, out_h, spec)),
        cb=quantize_u8(resample_plane(frame.cb, cw, ch, spec)),
        cr=quantize_u8(resample_plane(frame.cr, cw, ch, spec)),
    )


def downscale_420(frame: Frame420, factor: int,
                  spec: FilterSpec = FilterSpec()) -> Frame420:
    """Downscale by an integer factor; luma target is round(size / factor)."""
    _check_factor(factor)
    out_w = round(frame.width / factor)
    out_h = round(frame.height / factor)
    return _scale_frame(frame, out_w, out_h, spec)


def upscale_420(frame: Frame420, factor: int,
                spec: FilterSpec = FilterSpec()) -> Frame420:
    """Upscale by an integer factor; a (w, h) frame becomes exactly (w*s, h*s)."""
    _check_factor(factor)
    return _scale_frame(frame, frame.width * factor, frame.height * factor, spec)


def scale_420_to(frame: Frame420, out_w: int, out_h: int,
                 spec: FilterSpec = FilterSpec()) -> Frame420:
    """Resample to an explicit geometry (used for non-integer ladder rungs)."""
    return _scale_frame(frame, out_w, out_h, spec)


def _check_factor(factor: int):
    if factor not in (2, 3, 4):
        raise ValueError(f"scale factor {factor} outside the supported {{2,3,4}}")


def chroma_to_444(frame: Frame420) -> np.ndarray:
    """Lift to a (1, 3, H, W) float32 tensor in [0, 1].

    Y is copied; Cb/Cr are nearest-neighbour doubled (out[y, x] takes chroma
    sample [y // 2, x // 2]), which for odd sizes replicates the final row and
    column of the ceil-sized chroma planes.
    """
    h, w = frame.y.shape
    out = np.empty((1, 3, h, w), dtype=np.float32)
    out[0, 0] = frame.y
    for channel, plane in ((1, frame.cb), (2, frame.cr)):
        doubled = plane.repeat(2, axis=0).repeat(2, axis=1)
        out[0, channel] = doubled[:h, :w]
    out /= 255.0
    return out


def subsample_to_420(tensor: np.ndarray) -> Frame420:
    """Collapse a (1, 3, H, W) tensor in [0, 1] back to an 8-bit 4:2:0 frame.

    Chroma is box-averaged over 2x2 blocks; odd trailing rows/columns average
    over the samples that exist.
    """
    y, cb, cr = tensor[0, 0], tensor[0, 1], tensor[0, 2]
    return Frame420(
        y=quantize_u8(y * np.float32(255.0)),
        cb=quantize_u8(_box_half(cb) * np.float32(255.0)),
        cr=quantize_u8(_box_half(cr) * np.float32(255.0)),
    )


def _box_half(plane: np.ndarray) -> np.ndarray:
    """Mean over 2x2 blocks with partial blocks at odd edges."""
    h, w = plane.shape
    if h % 2 or w % 2:
        padded = np.pad(plane, ((0, h % 2), (0, w % 2)), mode="edge")
    else:
        padded = plane
    ph, pw = padded.shape
    return padded.reshape(ph // 2, 2, pw // 2, 2).mean(axis=(1, 3))
