"""Ready-made super-resolution model graphs and clip-level drivers.

Eight models cover two tracks: x3 upscaling benchmarked at 640x360 input
and x4 at 960x540, all under a 250 GMAC/frame budget at those geometries.

  superbicubicpp_x3/_x4   multi-branch (rep_block) conv trunks that fuse
                          into plain 3x3 chains for deployment
  bvi_rtvsr_x3/_x4        unshuffled half-res trunk emitting a luma
                          residual; chroma is upscaled outside the graph
  fsmd_x3/_x4             recurrent: flow-warped texture state + motion
                          refinement, driven frame by frame
  etdsv2                  dual-stream trunk (backbone + residual streams
                          with cross links) merged by addition, x3
  safm_lite_x4            split-channel modulation using a pooled
                          attention path gated on global channel variance

Layer widths and depths here are calibrated so the fused/deployment forms
land on the published parameter and MAC budgets; they are defaults, not
external contracts.  Drivers normalize planes to [0, 1], run the graph in
4:4:4, then quantize back to 8-bit 4:2:0.  Models with an unshuffle or
strided front end require even input geometry (GeometryNotDivisible).

Weights: pass a mapping or a weights-container path; omit to get seeded
fan-in-scaled random weights (no trained checkpoints ship with this
package).  The tensor set must match the model exactly (WeightMismatch).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from os import PathLike
from typing import Optional, Sequence

import numpy as np

from .frame_io import Frame420
from .nn_core import (
    ModelGraph,
    Node,
    count_macs,
    count_params,
    ensure_tensor,
    expected_weight_specs,
    init_weights,
    load_weights,
    run_graph,
)
from .reparam import fused_structure, standard_branches
from .resample import (
    BICUBIC,
    chroma_to_444,
    quantize_u8,
    resample_plane,
    subsample_to_420,
    upscale_420,
)


class WeightMismatch(ValueError):
    """Provided tensor set does not match the model's expected set."""


class GeometryNotDivisible(ValueError):
    """Input geometry violates the model's divisibility requirement."""


class GeometryChangedMidClip(ValueError):
    """A recurrent clip changed frame geometry between steps."""


MAC_BUDGET = 250 * 10**9

MODEL_NAMES = (
    "superbicubicpp_x3",
    "superbicubicpp_x4",
    "bvi_rtvsr_x3",
    "bvi_rtvsr_x4",
    "fsmd_x3",
    "fsmd_x4",
    "etdsv2",
    "safm_lite_x4",
)


@dataclass(frozen=True)
class ModelId:
    """A zoo entry: registry name plus its upscaling factor."""

    name: str
    scale: int

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(
                f"unknown model {self.name!r}; choose from {', '.join(MODEL_NAMES)}"
            )
        if self.scale != _REGISTRY[self.name].scale:
            raise ValueError(
                f"{self.name} is a x{_REGISTRY[self.name].scale} model, "
                f"not x{self.scale}"
            )

    @classmethod
    def parse(cls, name: str) -> "ModelId":
        if name not in MODEL_NAMES:
            raise ValueError(
                f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}"
            )
        return cls(name=name, scale=_REGISTRY[name].scale)

    def __str__(self):
        return self.name


def _conv(node_id, src, in_ch, out_ch, k=3, stride=1, padding=None):
    if padding is None:
        padding = 1 if k == 3 else 0
    return Node(node_id, "conv", (src,),
                dict(in_ch=in_ch, out_ch=out_ch, kernel=(k, k),
                     stride=stride, padding=padding))


def _res_block(prefix, src, ch):
    """conv - relu - conv - add residual block; returns (nodes, out id)."""
    nodes = [
        _conv(f"{prefix}.a", src, ch, ch),
        Node(f"{prefix}.a.act", "relu", (f"{prefix}.a",)),
        _conv(f"{prefix}.b", f"{prefix}.a.act", ch, ch),
        Node(f"{prefix}.sum", "add", (src, f"{prefix}.b")),
    ]
    return nodes, f"{prefix}.sum"


# ---------------------------------------------------------------- builders --

def build_superbicubicpp(scale: int) -> ModelGraph:
    """Rep-block trunk in training form; fuse_graph gives the deploy form.

    x3: stride-2 head into a 32-channel trunk (2 blocks, 64-mid sequential
    branch), 108-channel tail, shuffle 6 from half resolution.
    x4: full-resolution 64-channel trunk (10 blocks, 128-mid), 48-channel
    tail, shuffle 4.
    """
    if scale == 3:
        width, blocks, mid, stride, shuffle = 32, 2, 64, 2, 6
    elif scale == 4:
        width, blocks, mid, stride, shuffle = 64, 10, 128, 1, 4
    else:
        raise ValueError(f"unsupported scale {scale}")

    nodes = [
        _conv("head", "x", 3, width, stride=stride),
        Node("head.act", "relu", ("head",)),
    ]
    src = "head.act"
    for i in range(blocks):
        nodes.append(Node(f"body.{i}", "rep_block", (src,),
                          dict(in_ch=width, out_ch=width,
                               branches=standard_branches(mid))))
        nodes.append(Node(f"body.{i}.act", "relu", (f"body.{i}",)))
        src = f"body.{i}.act"
    nodes.append(_conv("tail", src, width, 3 * shuffle * shuffle))
    nodes.append(Node("up", "pixel_shuffle", ("tail",), dict(r=shuffle)))
    return ModelGraph(nodes=tuple(nodes), inputs=("x",), outputs=("up",),
                      weights={}, form="training")


def build_bvi_rtvsr(scale: int) -> ModelGraph:
    """Half-res 24-channel trunk emitting a 1-channel luma residual.

    Unshuffle-2 front, 3 residual blocks with flat conv naming
    (body.0 .. body.5), then a two-step shuffle upsampler: x2 back to
    input resolution, then x{scale} to the output grid.
    """
    if scale not in (3, 4):
        raise ValueError(f"unsupported scale {scale}")
    ch = 24
    nodes = [
        Node("down", "pixel_unshuffle", ("x",), dict(r=2)),
        _conv("head", "down", 12, ch),
        Node("head.act", "relu", ("head",)),
    ]
    src = "head.act"
    for i in range(3):
        nodes += [
            _conv(f"body.{2 * i}", src, ch, ch),
            Node(f"body.{2 * i}.act", "relu", (f"body.{2 * i}",)),
            _conv(f"body.{2 * i + 1}", f"body.{2 * i}.act", ch, ch),
            Node(f"block{i}.sum", "add", (src, f"body.{2 * i + 1}")),
        ]
        src = f"block{i}.sum"
    nodes += [
        _conv("up1", src, ch, ch * 4),
        Node("up1.act", "relu", ("up1",)),
        Node("up1.shuffle", "pixel_shuffle", ("up1.act",), dict(r=2)),
        _conv("up2", "up1.shuffle", ch, scale * scale),
        Node("residual", "pixel_shuffle", ("up2",), dict(r=scale)),
    ]
    return ModelGraph(nodes=tuple(nodes), inputs=("x",),
                      outputs=("residual",), weights={})


def build_fsmd(scale: int) -> ModelGraph:
    """Recurrent single-step graph: inputs frame/m/h0/h1, outputs
    residual/m_new/h0_new/h1_new.

    Unshuffled frame is concatenated with the motion-warped texture state
    and the motion-refinement state; extraction blocks (3 at x3, 2 at x4)
    feed a motion head (state update + flow delta), reconstruction blocks
    (10) feed the texture state and the shuffle tail.
    """
    if scale == 3:
        extraction, shuffle = 3, 6
    elif scale == 4:
        extraction, shuffle = 2, 8
    else:
        raise ValueError(f"unsupported scale {scale}")
    ch, c0, c1 = 80, 16, 24

    nodes = [
        Node("down", "pixel_unshuffle", ("frame",), dict(r=2)),
        Node("warped", "warp", ("h1", "m")),
        Node("cat", "concat", ("down", "warped", "h0")),
        _conv("entry", "cat", 12 + c1 + c0, ch),
        Node("entry.act", "relu", ("entry",)),
    ]
    src = "entry.act"
    for i in range(extraction):
        block, src = _res_block(f"ext{i}", src, ch)
        nodes += block
    nodes += [
        _conv("motion.state", src, ch, c0),
        Node("h0_new", "relu", ("motion.state",)),
        _conv("motion.delta", "h0_new", c0, 2),
        Node("m_new", "add", ("m", "motion.delta")),
    ]
    for i in range(10):
        block, src = _res_block(f"rec{i}", src, ch)
        nodes += block
    nodes += [
        _conv("texture.state", src, ch, c1),
        Node("h1_new", "relu", ("texture.state",)),
        _conv("tail", src, ch, 3 * shuffle * shuffle),
        Node("residual", "pixel_shuffle", ("tail",), dict(r=shuffle)),
    ]
    return ModelGraph(
        nodes=tuple(nodes), inputs=("frame", "m", "h0", "h1"),
        outputs=("residual", "m_new", "h0_new", "h1_new"), weights={},
    )


def build_etdsv2(scale: int = 3) -> ModelGraph:
    """Dual-stream trunk: backbone and residual streams exchange features
    through per-block cross convs and merge by addition before the tail."""
    if scale not in (3, 4):
        raise ValueError(f"unsupported scale {scale}")
    ch = 36
    nodes = [
        _conv("front", "x", 3, ch),
        Node("front.act", "relu", ("front",)),
    ]
    b_src = r_src = "front.act"
    for i in range(3):
        p = f"block{i}"
        nodes += [
            _conv(f"{p}.b", b_src, ch, ch),
            _conv(f"{p}.r2b", r_src, ch, ch),
            Node(f"{p}.bsum", "add", (f"{p}.b", f"{p}.r2b")),
            Node(f"{p}.bact", "relu", (f"{p}.bsum",)),
            _conv(f"{p}.r", r_src, ch, ch),
            _conv(f"{p}.b2r", b_src, ch, ch),
            Node(f"{p}.rsum", "add", (f"{p}.r", f"{p}.b2r")),
            Node(f"{p}.ract", "relu", (f"{p}.rsum",)),
        ]
        b_src, r_src = f"{p}.bact", f"{p}.ract"
    nodes += [
        Node("merge", "add", (b_src, r_src)),
        _conv("tail", "merge", ch, 3 * scale * scale),
        Node("up", "pixel_shuffle", ("tail",), dict(r=scale)),
    ]
    return ModelGraph(nodes=tuple(nodes), inputs=("x",), outputs=("up",),
                      weights={})


def build_safm_lite(scale: int = 4) -> ModelGraph:
    """Split-channel modulation: half the head features are modulated by a
    pooled conv path (x8 downsample, nearest restore) whose map is scaled
    by a variance-conditioned channel gate, then fused and refined."""
    if scale != 4:
        raise ValueError(f"unsupported scale {scale}")
    ch, half, hidden, expand = 24, 12, 56, 44
    nodes = [
        _conv("head", "x", 3, ch),
        Node("part_a", "slice", ("head",), dict(begin=0, end=half)),
        Node("part_b", "slice", ("head",), dict(begin=half, end=ch)),
        Node("pooled", "avg_pool", ("part_a",), dict(factor=8)),
        _conv("mod1", "pooled", half, hidden),
        Node("mod1.act", "relu", ("mod1",)),
        _conv("mod2", "mod1.act", hidden, half),
        Node("mod.up", "nearest_up", ("mod2", "part_a"), dict(factor=8)),
        Node("gate", "global_branch", ("part_a", "mod.up"),
             dict(channels=half)),
        Node("modulated", "mul", ("gate", "part_a")),
        Node("cat", "concat", ("modulated", "part_b")),
        _conv("fuse", "cat", ch, ch, k=1),
        Node("fuse.act", "relu", ("fuse",)),
        Node("skip1", "add", ("fuse.act", "head")),
        _conv("ccm1", "skip1", ch, expand),
        Node("ccm1.act", "relu", ("ccm1",)),
        _conv("ccm2", "ccm1.act", expand, ch, k=1),
        Node("skip2", "add", ("ccm2", "skip1")),
        _conv("tail", "skip2", ch, 3 * scale * scale),
        Node("up", "pixel_shuffle", ("tail",), dict(r=scale)),
    ]
    return ModelGraph(nodes=tuple(nodes), inputs=("x",), outputs=("up",),
                      weights={})


# ---------------------------------------------------------------- registry --

@dataclass(frozen=True)
class _Entry:
    scale: int
    build: callable
    divisor: int           # input luma W and H must be multiples of this
    track_input: tuple[int, int]
    driver: str            # "full_444" | "y_residual" | "recurrent"


_REGISTRY: dict[str, _Entry] = {
    "superbicubicpp_x3": _Entry(3, lambda: build_superbicubicpp(3), 2,
                                (640, 360), "full_444"),
    "superbicubicpp_x4": _Entry(4, lambda: build_superbicubicpp(4), 1,
                                (960, 540), "full_444"),
    "bvi_rtvsr_x3": _Entry(3, lambda: build_bvi_rtvsr(3), 2,
                           (640, 360), "y_residual"),
    "bvi_rtvsr_x4": _Entry(4, lambda: build_bvi_rtvsr(4), 2,
                           (960, 540), "y_residual"),
    "fsmd_x3": _Entry(3, lambda: build_fsmd(3), 2, (640, 360), "recurrent"),
    "fsmd_x4": _Entry(4, lambda: build_fsmd(4), 2, (960, 540), "recurrent"),
    "etdsv2": _Entry(3, build_etdsv2, 1, (640, 360), "full_444"),
    "safm_lite_x4": _Entry(4, build_safm_lite, 1, (960, 540), "full_444"),
}


def resolve(model) -> tuple[ModelId, _Entry]:
    if isinstance(model, ModelId):
        return model, _REGISTRY[model.name]
    model_id = ModelId.parse(str(model))
    return model_id, _REGISTRY[model_id.name]


def graph_for(model) -> ModelGraph:
    """The model's graph (training form where a fused form exists)."""
    _, entry = resolve(model)
    return entry.build()


def default_seed(model) -> int:
    model_id, _ = resolve(model)
    return zlib.crc32(model_id.name.encode("ascii"))


def prepare_weights(graph: ModelGraph, weights=None,
                    seed: int = 0) -> dict[str, np.ndarray]:
    """Validate (or synthesize) a tensor set for the graph.

    weights may be None (seeded random init), a mapping, or a weights-
    container path.  The provided names must match the expected set
    exactly and every shape must agree."""
    specs = expected_weight_specs(graph)
    if weights is None:
        return init_weights(graph, seed=seed)
    if isinstance(weights, (str, PathLike)):
        weights = load_weights(weights)
    missing = sorted(set(specs) - set(weights))
    extra = sorted(set(weights) - set(specs))
    if missing or extra:
        parts = []
        if missing:
            parts.append("missing: " + ", ".join(missing))
        if extra:
            parts.append("extra: " + ", ".join(extra))
        raise WeightMismatch("; ".join(parts))
    bad = [
        f"{name} has shape {tuple(weights[name].shape)}, expected {shape}"
        for name, (shape, _) in specs.items()
        if tuple(weights[name].shape) != shape
    ]
    if bad:
        raise WeightMismatch("; ".join(bad))
    return {name: np.asarray(weights[name], dtype=np.float32)
            for name in specs}


def _weighted_graph(model, weights) -> tuple[ModelId, _Entry, ModelGraph]:
    model_id, entry = resolve(model)
    graph = entry.build()
    tensors = prepare_weights(graph, weights, seed=default_seed(model_id))
    return model_id, entry, replace(graph, weights=tensors)


def model_complexity(model, lr_size: Optional[tuple[int, int]] = None) -> dict:
    """Deployment-form params and MACs at the given LR input (track
    geometry by default); MACs per pixel counts output pixels."""
    model_id, entry = resolve(model)
    width, height = lr_size if lr_size is not None else entry.track_input
    fused = fused_structure(entry.build())
    shapes = _input_shapes(entry, width, height)
    macs = count_macs(fused, shapes)
    out_px = (width * model_id.scale) * (height * model_id.scale)
    return {
        "model": model_id.name,
        "scale": model_id.scale,
        "input": (width, height),
        "params": count_params(fused),
        "macs": macs,
        "macs_per_output_pixel": macs / out_px,
        "within_budget": macs <= MAC_BUDGET,
    }


def _input_shapes(entry: _Entry, width: int, height: int):
    if entry.driver == "recurrent":
        hh, hw = height // 2, width // 2
        return {
            "frame": (1, 3, height, width),
            "m": (1, 2, hh, hw),
            "h0": (1, 16, hh, hw),
            "h1": (1, 24, hh, hw),
        }
    return (1, 3, height, width)


# --------------------------------------------------------------- recurrent --

@dataclass(frozen=True)
class RecurrentState:
    """Per-clip recurrent carry: flow field and the two hidden states at
    the half-resolution working grid, plus the weighted step graph."""

    motion: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    graph: ModelGraph
    scale: int


def fsmd_init_state(geometry: tuple[int, int], scale: int,
                    weights=None) -> RecurrentState:
    """Zero state for a (width, height) clip; weights as in upscale_clip."""
    width, height = geometry
    if width % 2 or height % 2:
        raise GeometryNotDivisible(
            f"recurrent models need even geometry, got {width}x{height}"
        )
    name = f"fsmd_x{scale}"
    _, _, graph = _weighted_graph(name, weights)
    hh, hw = height // 2, width // 2
    return RecurrentState(
        motion=np.zeros((1, 2, hh, hw), np.float32),
        h0=np.zeros((1, 16, hh, hw), np.float32),
        h1=np.zeros((1, 24, hh, hw), np.float32),
        graph=graph,
        scale=scale,
    )


def fsmd_step(frame: np.ndarray,
              state: RecurrentState) -> tuple[np.ndarray, RecurrentState]:
    """One recurrent step on a normalized (1, 3, h, w) tensor.

    Returns the HR frame tensor (bicubic base + learned residual) and the
    advanced state."""
    x = ensure_tensor(frame, "recurrent frame")
    _, _, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryNotDivisible(
            f"recurrent models need even geometry, got {w}x{h}"
        )
    if state.h0.shape[2:] != (h // 2, w // 2):
        sh = state.h0.shape
        raise GeometryChangedMidClip(
            f"clip started at {sh[3] * 2}x{sh[2] * 2}, got a {w}x{h} frame"
        )
    out = run_graph(state.graph, {
        "frame": x, "m": state.motion, "h0": state.h0, "h1": state.h1,
    })
    s = state.scale
    base = np.stack(
        [resample_plane(x[0, c], w * s, h * s, BICUBIC) for c in range(3)]
    )[None]
    hr = base + out["residual"]
    new_state = replace(state, motion=out["m_new"], h0=out["h0_new"],
                        h1=out["h1_new"])
    return hr, new_state


# ------------------------------------------------------------ clip driver ---

def upscale_clip(model, weights, clip: Sequence[Frame420]) -> list[Frame420]:
    """Upscale a 4:2:0 clip with a zoo model.

    weights: mapping, weights-container path, or None for seeded random
    init.  Stateless models process frames independently; the recurrent
    models thread state through the clip in display order.
    """
    model_id, entry, graph = _weighted_graph(model, weights)
    frames = list(clip)
    for frame in frames:
        if frame.width % entry.divisor or frame.height % entry.divisor:
            raise GeometryNotDivisible(
                f"{model_id.name} needs W and H divisible by {entry.divisor}, "
                f"got {frame.width}x{frame.height}"
            )

    if entry.driver == "recurrent":
        return _drive_recurrent(model_id, entry, graph, frames)
    if entry.driver == "y_residual":
        return [_drive_y_residual(entry, graph, f) for f in frames]
    return [_drive_full_444(graph, f) for f in frames]


def _drive_full_444(graph: ModelGraph, frame: Frame420) -> Frame420:
    x = chroma_to_444(frame)
    out = run_graph(graph, {"x": x})["up"]
    return subsample_to_420(out)


def _drive_y_residual(entry: _Entry, graph: ModelGraph,
                      frame: Frame420) -> Frame420:
    s = entry.scale
    x = chroma_to_444(frame)
    residual = run_graph(graph, {"x": x})["residual"]
    base_y = resample_plane(frame.y.astype(np.float32),
                            frame.width * s, frame.height * s, BICUBIC)
    y = quantize_u8(base_y + residual[0, 0] * 255.0)
    lifted = upscale_420(frame, s, BICUBIC)
    return Frame420(y=y, cb=lifted.cb, cr=lifted.cr)


def _drive_recurrent(model_id: ModelId, entry: _Entry, graph: ModelGraph,
                     frames: list[Frame420]) -> list[Frame420]:
    if not frames:
        return []
    geometry = (frames[0].width, frames[0].height)
    state = fsmd_init_state(geometry, entry.scale, weights=graph.weights)
    out: list[Frame420] = []
    for frame in frames:
        if (frame.width, frame.height) != geometry:
            raise GeometryChangedMidClip(
                f"clip started at {geometry[0]}x{geometry[1]}, got a "
                f"{frame.width}x{frame.height} frame"
            )
        hr, state = fsmd_step(chroma_to_444(frame), state)
        out.append(subsample_to_420(hr))
    return out
