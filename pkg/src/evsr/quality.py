"""Full-reference Y-plane metrics and training loss evaluators.

Metrics (PSNR-Y, SSIM, MS-SSIM) run on 8-bit 4:2:0 frames in float64.
SSIM uses the 11x11 Gaussian window (sigma 1.5), C1=(0.01*255)^2,
C2=(0.03*255)^2, averaged over valid window positions only.  MS-SSIM uses
the canonical 5-scale exponents with dyadic 2x pooling between scales;
when the short side cannot support 5 scales (176 px), the scale count is
reduced automatically and the subset exponents are renormalized to sum
to 1 (a single scale therefore gets exponent 1 and equals plain SSIM).

Losses operate on float tensors, (n, c, h, w) or bare 2-D planes, and are
plain forward evaluators:

  charbonnier      mean sqrt(diff^2 + eps^2)
  fft_l1           mean |delta| over real and imaginary DFT parts
  laplacian_loss   sum_j 4^j * mean-L1 over Laplacian pyramid levels
  combined_perceptual_loss
                   0.3*L1 + 0.2*(1-SSIM) + 0.1*L2 + 0.4*(1-MS-SSIM)
                   on [0,1]-normalized tensors
  kd_total_loss    alpha*Lap(student, gt) + sum_t Lap(student, teacher_t)

Clip aggregation averages per-frame values; infinite-PSNR frames are
excluded from the mean and counted separately so means stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .frame_io import Frame420, GeometryMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MS_SSIM_EXPONENTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class FrameTooSmall(ValueError):
    """Plane is smaller than the metric's window can cover."""


# ------------------------------------------------------------------ PSNR ----

def psnr_plane(ref: np.ndarray, dist: np.ndarray,
               data_range: float = 255.0) -> float:
    """10*log10(range^2 / MSE); identical planes give +infinity."""
    if ref.shape != dist.shape:
        raise GeometryMismatch(f"planes {ref.shape} vs {dist.shape}")
    diff = ref.astype(np.float64) - dist.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def psnr_y(ref: Frame420, dist: Frame420) -> float:
    _check_geometry(ref, dist)
    return psnr_plane(ref.y, dist.y)


def _check_geometry(ref: Frame420, dist: Frame420):
    if (ref.width, ref.height) != (dist.width, dist.height):
        raise GeometryMismatch(
            f"frames {ref.width}x{ref.height} vs {dist.width}x{dist.height}"
        )


# ------------------------------------------------------------------ SSIM ----

def _gaussian_taps(size: int = SSIM_WINDOW,
                   sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _window_mean(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Valid-mode separable windowed mean (Gaussian-weighted)."""
    rows = np.lib.stride_tricks.sliding_window_view(plane, len(taps), axis=1)
    tmp = rows @ taps
    cols = np.lib.stride_tricks.sliding_window_view(tmp, len(taps), axis=0)
    return cols @ taps


def _ssim_maps(ref: np.ndarray, dist: np.ndarray, data_range: float):
    """Luminance and contrast-structure maps over valid window positions."""
    if ref.shape != dist.shape:
        raise GeometryMismatch(f"planes {ref.shape} vs {dist.shape}")
    h, w = ref.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise FrameTooSmall(
            f"{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = ref.astype(np.float64)
    y = dist.astype(np.float64)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    taps = _gaussian_taps()

    mu_x = _window_mean(x, taps)
    mu_y = _window_mean(y, taps)
    sigma_xx = _window_mean(x * x, taps) - mu_x * mu_x
    sigma_yy = _window_mean(y * y, taps) - mu_y * mu_y
    sigma_xy = _window_mean(x * y, taps) - mu_x * mu_y

    luminance = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2.0 * sigma_xy + c2) / (sigma_xx + sigma_yy + c2)
    return luminance, cs


def ssim_plane(ref: np.ndarray, dist: np.ndarray,
               data_range: float = 255.0) -> float:
    luminance, cs = _ssim_maps(ref, dist, data_range)
    return float(np.mean(luminance * cs))


def ssim_y(ref: Frame420, dist: Frame420) -> float:
    _check_geometry(ref, dist)
    return ssim_plane(ref.y, dist.y)


# --------------------------------------------------------------- MS-SSIM ----

def ms_ssim_scale_count(height: int, width: int, scales: int = 5) -> int:
    """Scales actually usable: each halving must keep the window covered."""
    short = min(height, width)
    if short < SSIM_WINDOW:
        raise FrameTooSmall(
            f"short side {short} is below the {SSIM_WINDOW}px window"
        )
    usable = int(math.floor(math.log2(short / SSIM_WINDOW))) + 1
    return max(1, min(scales, usable))


def _halve(plane: np.ndarray) -> np.ndarray:
    """2x2 average pooling; trailing odd row/column cropped."""
    h, w = plane.shape
    even = plane[: h - h % 2, : w - w % 2]
    return even.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def ms_ssim_plane(ref: np.ndarray, dist: np.ndarray,
                  data_range: float = 255.0, scales: int = 5) -> float:
    used = ms_ssim_scale_count(ref.shape[0], ref.shape[1], scales)
    if used == len(MS_SSIM_EXPONENTS):
        exponents = MS_SSIM_EXPONENTS
    else:
        subset = MS_SSIM_EXPONENTS[:used]
        total = sum(subset)
        exponents = tuple(e / total for e in subset)

    x = ref.astype(np.float64)
    y = dist.astype(np.float64)
    score = 1.0
    for level in range(used):
        luminance, cs = _ssim_maps(x, y, data_range)
        if level == used - 1:
            term = max(float(np.mean(luminance * cs)), 0.0)
        else:
            term = max(float(np.mean(cs)), 0.0)
            x, y = _halve(x), _halve(y)
        score *= term ** exponents[level]
    return score


def ms_ssim_y(ref: Frame420, dist: Frame420, scales: int = 5) -> float:
    _check_geometry(ref, dist)
    return ms_ssim_plane(ref.y, dist.y, scales=scales)


# ---------------------------------------------------------------- losses ----

def _as_pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise GeometryMismatch(f"tensors {p.shape} vs {t.shape}")
    return p, t


def charbonnier(pred, target, eps: float = 1e-3) -> float:
    """Smooth L1: mean of sqrt(diff^2 + eps^2); equals eps at zero diff."""
    p, t = _as_pair(pred, target)
    diff = p - t
    return float(np.mean(np.sqrt(diff * diff + eps * eps)))


def fft_l1(pred, target) -> float:
    """Mean absolute spectral difference over real and imaginary parts.

    Phase-sensitive by construction: translations change the value even
    when per-bin magnitudes are unchanged.  Normalization is mean over all
    (re, im) samples, so the scale is resolution-independent."""
    p, t = _as_pair(pred, target)
    fp = np.fft.fft2(p, axes=(-2, -1))
    ft = np.fft.fft2(t, axes=(-2, -1))
    delta = np.abs(fp.real - ft.real) + np.abs(fp.imag - ft.imag)
    return float(delta.sum() / (2.0 * delta.size))


_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _binomial_blur(plane: np.ndarray) -> np.ndarray:
    """Separable 5-tap low-pass with edge replication."""
    padded = np.pad(plane, ((0, 0), (2, 2)), mode="edge")
    rows = np.lib.stride_tricks.sliding_window_view(padded, 5, axis=1)
    tmp = rows @ _BINOMIAL5
    padded = np.pad(tmp, ((2, 2), (0, 0)), mode="edge")
    cols = np.lib.stride_tricks.sliding_window_view(padded, 5, axis=0)
    return cols @ _BINOMIAL5


def laplacian_pyramid(plane: np.ndarray, depth: int = 5) -> list[np.ndarray]:
    """Band-pass levels 0..depth-2 plus the final low-pass residual."""
    levels = []
    current = np.asarray(plane, dtype=np.float64)
    for _ in range(depth - 1):
        if min(current.shape) < 2:
            break
        blurred = _binomial_blur(current)
        levels.append(current - blurred)
        current = blurred[::2, ::2]
    levels.append(current)
    return levels


def laplacian_loss(pred, target, depth: int = 5) -> float:
    """Sum over pyramid levels of 4^level * mean-L1 of the difference.

    Depth 1 has a single level (the image itself), so the loss reduces to
    plain mean absolute error."""
    p, t = _as_pair(pred, target)
    planes_p = p.reshape(-1, p.shape[-2], p.shape[-1])
    planes_t = t.reshape(-1, t.shape[-2], t.shape[-1])
    total = 0.0
    count = 0
    for plane_p, plane_t in zip(planes_p, planes_t):
        pyr_p = laplacian_pyramid(plane_p, depth)
        pyr_t = laplacian_pyramid(plane_t, depth)
        value = sum(
            (4.0 ** j) * float(np.mean(np.abs(lp - lt)))
            for j, (lp, lt) in enumerate(zip(pyr_p, pyr_t))
        )
        total += value
        count += 1
    return total / count


@dataclass(frozen=True)
class LossWeights:
    """Combined-loss weights; the four quality weights must sum to 1."""

    w_l1: float = 0.3
    w_ssim: float = 0.2
    w_l2: float = 0.1
    w_msssim: float = 0.4
    alpha: float = 0.1

    def __post_init__(self):
        total = self.w_l1 + self.w_ssim + self.w_l2 + self.w_msssim
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"quality weights sum to {total}, expected 1.0")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def combined_loss_from_components(l1: float, ssim_loss: float, l2: float,
                                  msssim_loss: float,
                                  weights: LossWeights = LossWeights()) -> float:
    """The weighted sum alone, for substituting known component values."""
    return (weights.w_l1 * l1 + weights.w_ssim * ssim_loss
            + weights.w_l2 * l2 + weights.w_msssim * msssim_loss)


def combined_perceptual_loss(pred, target,
                             weights: LossWeights = LossWeights()) -> float:
    """0.3*L1 + 0.2*(1-SSIM) + 0.1*L2 + 0.4*(1-MS-SSIM) on [0,1] tensors."""
    p, t = _as_pair(pred, target)
    l1 = float(np.mean(np.abs(p - t)))
    l2 = float(np.mean((p - t) ** 2))
    planes_p = p.reshape(-1, p.shape[-2], p.shape[-1])
    planes_t = t.reshape(-1, t.shape[-2], t.shape[-1])
    ssim_vals = [ssim_plane(a, b, data_range=1.0)
                 for a, b in zip(planes_p, planes_t)]
    msssim_vals = [ms_ssim_plane(a, b, data_range=1.0)
                   for a, b in zip(planes_p, planes_t)]
    ssim_loss = 1.0 - float(np.mean(ssim_vals))
    msssim_loss = 1.0 - float(np.mean(msssim_vals))
    return combined_loss_from_components(l1, ssim_loss, l2, msssim_loss,
                                         weights)


def kd_total_from_losses(lap_gt: float, lap_teachers: Sequence[float],
                         alpha: float = 0.1) -> float:
    """alpha * Lap(student, gt) + sum of Lap(student, teacher) values."""
    return alpha * lap_gt + float(sum(lap_teachers))


def kd_total_loss(student, teacher_outputs: Sequence, ground_truth,
                  alpha: float = 0.1) -> float:
    """Distillation total: the ground-truth term is weighted by alpha, the
    per-teacher terms enter unweighted."""
    lap_gt = laplacian_loss(student, ground_truth)
    lap_teachers = [laplacian_loss(student, teacher)
                    for teacher in teacher_outputs]
    return kd_total_from_losses(lap_gt, lap_teachers, alpha)


# ---------------------------------------------------------- clip scoring ----

@dataclass(frozen=True)
class FrameScore:
    psnr_y: float
    ssim_y: float
    ms_ssim_y: Optional[float] = None


@dataclass(frozen=True)
class MetricScore:
    """Clip means plus the per-frame series.

    psnr_y averages the finite per-frame values; frames with infinite PSNR
    (bit-identical planes) are excluded and counted in inf_psnr_frames.
    An all-identical clip reports infinity."""

    psnr_y: float
    ssim_y: float
    ms_ssim_y: Optional[float]
    inf_psnr_frames: int
    ms_ssim_scales: Optional[int]
    frames: tuple[FrameScore, ...]


def score_clip(ref_clip: Sequence[Frame420], dist_clip: Sequence[Frame420],
               with_ms_ssim: bool = True) -> MetricScore:
    """Score a distorted clip against its reference, frame by frame."""
    ref_frames = list(ref_clip)
    dist_frames = list(dist_clip)
    if len(ref_frames) != len(dist_frames):
        raise GeometryMismatch(
            f"clip lengths differ: {len(ref_frames)} vs {len(dist_frames)}"
        )
    if not ref_frames:
        raise ValueError("cannot score an empty clip")

    frames = []
    for ref, dist in zip(ref_frames, dist_frames):
        frames.append(FrameScore(
            psnr_y=psnr_y(ref, dist),
            ssim_y=ssim_y(ref, dist),
            ms_ssim_y=ms_ssim_y(ref, dist) if with_ms_ssim else None,
        ))

    finite = [f.psnr_y for f in frames if math.isfinite(f.psnr_y)]
    inf_count = len(frames) - len(finite)
    mean_psnr = sum(finite) / len(finite) if finite else math.inf
    scales = None
    if with_ms_ssim:
        scales = ms_ssim_scale_count(ref_frames[0].height,
                                     ref_frames[0].width)
    return MetricScore(
        psnr_y=mean_psnr,
        ssim_y=sum(f.ssim_y for f in frames) / len(frames),
        ms_ssim_y=(sum(f.ms_ssim_y for f in frames) / len(frames)
                   if with_ms_ssim else None),
        inf_psnr_frames=inf_count,
        ms_ssim_scales=scales,
        frames=tuple(frames),
    )
