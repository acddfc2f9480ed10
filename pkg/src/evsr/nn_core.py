"""Minimal float32 inference engine.

Values are rank-4 numpy arrays laid out (batch, channels, height, width).
Models are declarative DAGs (`ModelGraph`) whose nodes name their inputs;
weights live beside the graph in a flat name->array mapping using
"<node-id>.weight" / "<node-id>.bias" names (multi-branch block tensors add a
branch segment: "<node-id>.<branch>.weight").

Convolution is direct cross-correlation (no kernel flip) with zero padding,
the convention of the architectures hosted here.  Complexity accounting:
1 multiply-accumulate = 1 MAC, counted for weighted nodes only; elementwise
math, data movement (shuffles, warps, pooling) and bias adds are free.

Weights file format (little-endian throughout): magic "EVSRW\\0", u16
version=1, u32 tensor count, then per tensor u16 name length, UTF-8 name,
u8 rank, u32 dims[rank], f32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Tensor geometry violates an op precondition."""


class ChannelMismatch(ShapeMismatch):
    """Channel counts disagree where they must match."""


class NotDivisible(ValueError):
    """Spatial or channel extent not divisible by the shuffle factor."""


class MissingWeight(KeyError):
    """A graph node references a weight tensor that was not provided."""

    def __str__(self):
        return self.args[0] if self.args else ""


class WeightsFormatError(ValueError):
    """Weights file is corrupt or has an unsupported version."""


WEIGHTS_MAGIC = b"EVSRW\x00"
WEIGHTS_VERSION = 1

NODE_KINDS = frozenset({
    "conv", "relu", "add", "mul", "concat", "slice",
    "pixel_shuffle", "pixel_unshuffle", "avg_pool", "nearest_up",
    "warp", "global_branch", "rep_block",
})

# Keep single-layer im2col buffers at or below ~64 MB of float32.
_CHUNK_ELEMS = 16 << 20


def ensure_tensor(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if x.ndim != 4:
        raise ShapeMismatch(f"{what} must be rank-4 (n, c, h, w), got rank {x.ndim}")
    return np.ascontiguousarray(x, dtype=np.float32)


# ------------------------------------------------------------------ layers --

@dataclass(frozen=True)
class ConvSpec:
    """A convolution layer: geometry plus its weight and bias arrays."""

    in_ch: int
    out_ch: int
    kernel: tuple[int, int]
    stride: int
    padding: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel not in ((1, 1), (3, 3)):
            raise ShapeMismatch(f"kernel {self.kernel} not in {{(1,1),(3,3)}}")
        if self.stride not in (1, 2):
            raise ShapeMismatch(f"stride {self.stride} not in {{1,2}}")
        if self.padding not in (0, 1):
            raise ShapeMismatch(f"padding {self.padding} not in {{0,1}}")
        expect = (self.out_ch, self.in_ch) + self.kernel
        if tuple(self.weights.shape) != expect:
            raise ShapeMismatch(f"weight shape {self.weights.shape} != {expect}")
        if tuple(self.bias.shape) != (self.out_ch,):
            raise ShapeMismatch(f"bias shape {self.bias.shape} != ({self.out_ch},)")


def conv_out_hw(h: int, w: int, kernel: tuple[int, int],
                stride: int, padding: int) -> tuple[int, int]:
    kh, kw = kernel
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeMismatch(
            f"input {h}x{w} too small for kernel {kernel} pad {padding}"
        )
    return h_out, w_out


def conv2d(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Cross-correlation with zero padding, evaluated as chunked im2col."""
    x = ensure_tensor(x, "conv input")
    n, c, h, w = x.shape
    if c != spec.in_ch:
        raise ChannelMismatch(f"input has {c} channels, layer expects {spec.in_ch}")
    kh, kw = spec.kernel
    h_out, w_out = conv_out_hw(h, w, spec.kernel, spec.stride, spec.padding)

    if spec.padding:
        p = spec.padding
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    kmat = spec.weights.reshape(spec.out_ch, c * kh * kw).T.astype(np.float32)
    bias = spec.bias.astype(np.float32)

    out = np.empty((n, h_out, w_out, spec.out_ch), dtype=np.float32)
    rows_per_chunk = max(1, _CHUNK_ELEMS // max(1, n * w_out * c * kh * kw))
    col_idx = np.arange(w_out) * spec.stride
    for r0 in range(0, h_out, rows_per_chunk):
        r1 = min(r0 + rows_per_chunk, h_out)
        row_idx = np.arange(r0, r1) * spec.stride
        # (n, c, rows, w_out, kh, kw) gathered as a contiguous copy
        chunk = windows[:, :, row_idx[:, None], col_idx[None, :]]
        chunk = chunk.transpose(0, 2, 3, 1, 4, 5).reshape(-1, c * kh * kw)
        out[:, r0:r1] = (chunk @ kmat).reshape(n, r1 - r0, w_out, spec.out_ch)
    out += bias
    return out.transpose(0, 3, 1, 2).copy()


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Space to depth: (n, c, h, w) -> (n, c*r*r, h/r, w/r).

    Output channel index is c*r*r + dy*r + dx (source channel slowest, dx
    fastest), the inverse ordering of pixel_shuffle.
    """
    x = ensure_tensor(x)
    n, c, h, w = x.shape
    if h % r or w % r:
        raise NotDivisible(f"spatial {h}x{w} not divisible by r={r}")
    x = x.reshape(n, c, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * r * r, h // r, w // r).copy()


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Depth to space: (n, c, h, w) -> (n, c/(r*r), h*r, w*r)."""
    x = ensure_tensor(x)
    n, c, h, w = x.shape
    if c % (r * r):
        raise NotDivisible(f"channels {c} not divisible by r^2={r * r}")
    x = x.reshape(n, c // (r * r), r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return x.reshape(n, c // (r * r), h * r, w * r).copy()


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Mean over factor x factor blocks; ceil-sized output with edge-replicated
    partial blocks at the bottom/right when the extent is not divisible."""
    x = ensure_tensor(x)
    n, c, h, w = x.shape
    ph = (factor - h % factor) % factor
    pw = (factor - w % factor) % factor
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    hh, ww = x.shape[2] // factor, x.shape[3] // factor
    return x.reshape(n, c, hh, factor, ww, factor).mean(axis=(3, 5),
                                                        dtype=np.float32)


def nearest_up(x: np.ndarray, factor: int,
               out_hw: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Nearest-neighbour upsample by factor; optionally cropped to out_hw
    (out[y, x] = in[y // factor, x // factor])."""
    x = ensure_tensor(x)
    up = x.repeat(factor, axis=2).repeat(factor, axis=3)
    if out_hw is not None:
        oh, ow = out_hw
        if oh > up.shape[2] or ow > up.shape[3]:
            raise ShapeMismatch(
                f"crop {oh}x{ow} exceeds upsampled extent {up.shape[2:]}"
            )
        up = up[:, :, :oh, :ow]
    return np.ascontiguousarray(up)


def warp(x: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward bilinear warp: out[y, x] samples x at (y + flow_y, x + flow_x).

    flow is (n, 2, h, w) with channel 0 = horizontal and channel 1 = vertical
    displacement in pixels; sample positions are clamped to the frame.
    """
    x = ensure_tensor(x, "warp features")
    flow = ensure_tensor(flow, "warp flow")
    n, c, h, w = x.shape
    if flow.shape != (n, 2, h, w):
        raise ShapeMismatch(f"flow shape {flow.shape} != {(n, 2, h, w)}")

    gx = np.arange(w, dtype=np.float32)[None, None, :] + flow[:, 0]
    gy = np.arange(h, dtype=np.float32)[None, :, None] + flow[:, 1]
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]

    out = np.empty_like(x)
    for b in range(n):
        planes = x[b]
        p00 = planes[:, y0[b], x0[b]]
        p01 = planes[:, y0[b], x1[b]]
        p10 = planes[:, y1[b], x0[b]]
        p11 = planes[:, y1[b], x1[b]]
        top = p00 + (p01 - p00) * fx[b]
        bottom = p10 + (p11 - p10) * fx[b]
        out[b] = top + (bottom - top) * fy[b]
    return out


def global_branch_gate(src: np.ndarray, target: np.ndarray,
                       weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Scale `target` by a per-channel gate conditioned on the spatial
    variance of `src`: gate = sigmoid(W @ var(src) + b)."""
    src = ensure_tensor(src, "gate source")
    target = ensure_tensor(target, "gate target")
    channels = src.shape[1]
    if weight.shape != (channels, channels) or bias.shape != (channels,):
        raise ShapeMismatch(
            f"gate weights {weight.shape}/{bias.shape} do not match "
            f"{channels} channels"
        )
    if target.shape[1] != channels:
        raise ShapeMismatch(
            f"gate target has {target.shape[1]} channels, source has {channels}"
        )
    variance = src.var(axis=(2, 3), dtype=np.float32)          # (n, c)
    pre = variance @ weight.T.astype(np.float32) + bias.astype(np.float32)
    gate = 1.0 / (1.0 + np.exp(-pre, dtype=np.float32))
    return target * gate[:, :, None, None]


# ------------------------------------------------------------------- graph --

@dataclass(frozen=True)
class Node:
    """One graph node: id, op kind, input ids, and op attributes."""

    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass(frozen=True)
class ModelGraph:
    """Topologically ordered DAG with named inputs/outputs and its weights.

    form is "training" (may contain rep_block nodes) or "fused".
    Graphs are immutable; transforms return new instances.
    """

    nodes: tuple[Node, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    weights: Mapping[str, np.ndarray]
    form: str = "fused"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        seen = set(self.inputs)
        for node in self.nodes:
            if node.id in seen:
                raise ValueError(f"duplicate node id {node.id!r}")
            for ref in node.inputs:
                if ref not in seen:
                    raise ValueError(
                        f"node {node.id!r} references {ref!r} before definition"
                    )
            seen.add(node.id)
        for out in self.outputs:
            if out not in seen:
                raise ValueError(f"declared output {out!r} is not produced")

    def node(self, node_id: str) -> Node:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)


def _conv_spec_for(node: Node, weights: Mapping[str, np.ndarray]) -> ConvSpec:
    a = node.attrs
    return ConvSpec(
        in_ch=a["in_ch"], out_ch=a["out_ch"], kernel=tuple(a["kernel"]),
        stride=a.get("stride", 1), padding=a.get("padding", 1),
        weights=_fetch(weights, f"{node.id}.weight"),
        bias=_fetch(weights, f"{node.id}.bias"),
    )


def _fetch(weights: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    try:
        return weights[name]
    except KeyError:
        raise MissingWeight(name) from None


def run_graph(graph: ModelGraph, inputs: Mapping[str, np.ndarray],
              all_nodes: bool = False) -> dict[str, np.ndarray]:
    """Evaluate the graph; returns the declared outputs by name.

    Deterministic: identical inputs and weights produce bit-identical
    outputs on one platform.  With all_nodes=True every intermediate value
    is returned as well (used by shape-inference tests).
    """
    values: dict[str, np.ndarray] = {}
    for name in graph.inputs:
        if name not in inputs:
            raise ShapeMismatch(f"missing graph input {name!r}")
        values[name] = ensure_tensor(np.asarray(inputs[name]), f"input {name!r}")

    for node in graph.nodes:
        args = [values[ref] for ref in node.inputs]
        try:
            values[node.id] = _eval_node(node, args, graph.weights)
        except (ShapeMismatch, NotDivisible) as err:
            raise type(err)(f"at node {node.id!r}: {err}") from None
    if all_nodes:
        return values
    return {name: values[name] for name in graph.outputs}


def _eval_node(node: Node, args: list[np.ndarray],
               weights: Mapping[str, np.ndarray]) -> np.ndarray:
    kind = node.kind
    if kind == "conv":
        return conv2d(args[0], _conv_spec_for(node, weights))
    if kind == "relu":
        return relu(args[0])
    if kind == "add":
        _require_same_shape(args)
        out = args[0].copy()
        for other in args[1:]:
            out += other
        return out
    if kind == "mul":
        _require_same_shape(args)
        out = args[0].copy()
        for other in args[1:]:
            out *= other
        return out
    if kind == "concat":
        base = args[0].shape
        for arr in args[1:]:
            if arr.shape[0] != base[0] or arr.shape[2:] != base[2:]:
                raise ShapeMismatch(
                    f"concat operands {base} vs {arr.shape} disagree outside "
                    "the channel axis"
                )
        return np.concatenate(args, axis=1)
    if kind == "slice":
        begin, end = node.attrs["begin"], node.attrs["end"]
        if not 0 <= begin < end <= args[0].shape[1]:
            raise ShapeMismatch(
                f"slice [{begin}:{end}] outside {args[0].shape[1]} channels"
            )
        return np.ascontiguousarray(args[0][:, begin:end])
    if kind == "pixel_shuffle":
        return pixel_shuffle(args[0], node.attrs["r"])
    if kind == "pixel_unshuffle":
        return pixel_unshuffle(args[0], node.attrs["r"])
    if kind == "avg_pool":
        return avg_pool(args[0], node.attrs["factor"])
    if kind == "nearest_up":
        ref_hw = args[1].shape[2:] if len(args) > 1 else None
        return nearest_up(args[0], node.attrs["factor"], ref_hw)
    if kind == "warp":
        return warp(args[0], args[1])
    if kind == "global_branch":
        return global_branch_gate(
            args[0], args[1],
            _fetch(weights, f"{node.id}.weight"),
            _fetch(weights, f"{node.id}.bias"),
        )
    if kind == "rep_block":
        from . import reparam  # deferred: reparam builds on this module
        return reparam.rep_block_forward(args[0], node, weights)
    raise ValueError(f"unhandled node kind {kind!r}")


def _require_same_shape(args: Sequence[np.ndarray]):
    for arr in args[1:]:
        if arr.shape != args[0].shape:
            raise ShapeMismatch(
                f"elementwise operands {args[0].shape} vs {arr.shape} differ"
            )


# -------------------------------------------------------- shape inference ---

def infer_shapes(graph: ModelGraph,
                 input_shapes: Mapping[str, tuple]) -> dict[str, tuple]:
    """Static shapes for every node, mirroring executor semantics."""
    shapes: dict[str, tuple] = {}
    for name in graph.inputs:
        if name not in input_shapes:
            raise ShapeMismatch(f"missing shape for graph input {name!r}")
        shapes[name] = tuple(input_shapes[name])

    for node in graph.nodes:
        ins = [shapes[ref] for ref in node.inputs]
        shapes[node.id] = _infer_node(node, ins)
    return shapes


def _infer_node(node: Node, ins: list[tuple]) -> tuple:
    kind = node.kind
    a = node.attrs
    if kind == "conv":
        n, c, h, w = ins[0]
        if c != a["in_ch"]:
            raise ShapeMismatch(
                f"node {node.id!r}: {c} channels into a {a['in_ch']}-channel conv"
            )
        h_out, w_out = conv_out_hw(h, w, tuple(a["kernel"]),
                                   a.get("stride", 1), a.get("padding", 1))
        return (n, a["out_ch"], h_out, w_out)
    if kind in ("relu", "warp"):
        return ins[0]
    if kind in ("add", "mul"):
        for shape in ins[1:]:
            if shape != ins[0]:
                raise ShapeMismatch(f"node {node.id!r}: {ins[0]} vs {shape}")
        return ins[0]
    if kind == "concat":
        n, _, h, w = ins[0]
        return (n, sum(shape[1] for shape in ins), h, w)
    if kind == "slice":
        n, _, h, w = ins[0]
        return (n, a["end"] - a["begin"], h, w)
    if kind == "pixel_shuffle":
        n, c, h, w = ins[0]
        r = a["r"]
        if c % (r * r):
            raise NotDivisible(f"node {node.id!r}: channels {c} vs r^2 {r * r}")
        return (n, c // (r * r), h * r, w * r)
    if kind == "pixel_unshuffle":
        n, c, h, w = ins[0]
        r = a["r"]
        if h % r or w % r:
            raise NotDivisible(f"node {node.id!r}: {h}x{w} vs r {r}")
        return (n, c * r * r, h // r, w // r)
    if kind == "avg_pool":
        n, c, h, w = ins[0]
        f = a["factor"]
        return (n, c, -(-h // f), -(-w // f))
    if kind == "nearest_up":
        n, c, _, _ = ins[0]
        if len(ins) > 1:
            return (n, c, ins[1][2], ins[1][3])
        return (n, c, ins[0][2] * a["factor"], ins[0][3] * a["factor"])
    if kind == "global_branch":
        return ins[1]
    if kind == "rep_block":
        n, c, h, w = ins[0]
        if c != a["in_ch"]:
            raise ShapeMismatch(
                f"node {node.id!r}: {c} channels into a {a['in_ch']}-channel block"
            )
        return (n, a["out_ch"], h, w)
    raise ValueError(f"unhandled node kind {kind!r}")


# ------------------------------------------------------------- accounting ---

def count_params(graph: ModelGraph) -> int:
    """Learnable scalar count: conv contributes out*in*kh*kw + out, the
    variance gate contributes its channel matrix + bias, multi-branch blocks
    contribute the sum over branches; unweighted nodes contribute 0."""
    total = 0
    for node in graph.nodes:
        if node.kind == "conv":
            a = node.attrs
            kh, kw = a["kernel"]
            total += a["out_ch"] * a["in_ch"] * kh * kw + a["out_ch"]
        elif node.kind == "global_branch":
            c = node.attrs["channels"]
            total += c * c + c
        elif node.kind == "rep_block":
            from . import reparam
            total += reparam.rep_block_param_count(node.attrs)
    return total


def count_macs(graph: ModelGraph, input_shape) -> int:
    """Multiply-accumulates per evaluation at the given input geometry.

    input_shape is a single (n, c, h, w) tuple for single-input graphs or a
    {name: shape} mapping otherwise.  Convolutions count
    out_ch*in_ch*kh*kw*h_out*w_out; shuffles, elementwise math, warps,
    pooling, and the variance gate count 0.
    """
    if isinstance(input_shape, Mapping):
        shapes = dict(input_shape)
    else:
        if len(graph.inputs) != 1:
            raise ShapeMismatch(
                "graph has several inputs; pass a {name: shape} mapping"
            )
        shapes = {graph.inputs[0]: tuple(input_shape)}
    inferred = infer_shapes(graph, shapes)

    total = 0
    for node in graph.nodes:
        if node.kind == "conv":
            a = node.attrs
            kh, kw = a["kernel"]
            _, _, h_out, w_out = inferred[node.id]
            total += a["out_ch"] * a["in_ch"] * kh * kw * h_out * w_out
        elif node.kind == "rep_block":
            from . import reparam
            _, _, h_out, w_out = inferred[node.id]
            total += reparam.rep_block_macs(node.attrs, h_out, w_out)
    return total


# ------------------------------------------------------------ weight init ---

def expected_weight_specs(graph: ModelGraph) -> dict[str, tuple[tuple, int]]:
    """Name -> (shape, fan_in) for every tensor the graph requires."""
    specs: dict[str, tuple[tuple, int]] = {}
    for node in graph.nodes:
        if node.kind == "conv":
            a = node.attrs
            kh, kw = a["kernel"]
            fan = a["in_ch"] * kh * kw
            specs[f"{node.id}.weight"] = ((a["out_ch"], a["in_ch"], kh, kw), fan)
            specs[f"{node.id}.bias"] = ((a["out_ch"],), fan)
        elif node.kind == "global_branch":
            c = node.attrs["channels"]
            specs[f"{node.id}.weight"] = ((c, c), c)
            specs[f"{node.id}.bias"] = ((c,), c)
        elif node.kind == "rep_block":
            from . import reparam
            specs.update(reparam.rep_block_weight_specs(node.id, node.attrs))
    return specs


def init_weights(graph: ModelGraph, seed: int = 0) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for name, (shape, fan_in) in expected_weight_specs(graph).items():
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        weights[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return weights


def with_weights(graph: ModelGraph, weights: Mapping[str, np.ndarray]) -> ModelGraph:
    return replace(graph, weights=dict(weights))


# ------------------------------------------------------------ weights file --

def save_weights(path, weights: Mapping[str, np.ndarray]) -> int:
    """Write the weights container; returns bytes written."""
    blob = bytearray()
    blob += WEIGHTS_MAGIC
    blob += struct.pack("<H", WEIGHTS_VERSION)
    blob += struct.pack("<I", len(weights))
    for name, array in weights.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f4")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("B", data.ndim)
        blob += struct.pack(f"<{data.ndim}I", *data.shape)
        blob += data.tobytes()
    with open(path, "wb") as sink:
        sink.write(bytes(blob))
    return len(blob)


def load_weights(path) -> dict[str, np.ndarray]:
    """Read a weights container back into name -> float32 array."""
    with open(path, "rb") as source:
        blob = source.read()
    view = memoryview(blob)
    offset = len(WEIGHTS_MAGIC)
    if bytes(view[:offset]) != WEIGHTS_MAGIC:
        raise WeightsFormatError("bad magic; not a weights container")
    (version,) = struct.unpack_from("<H", view, offset)
    offset += 2
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"unsupported container version {version}")
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4

    weights: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("B", view, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            array = np.frombuffer(view, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
        except (struct.error, ValueError) as err:
            raise WeightsFormatError(f"truncated container: {err}") from None
        weights[name] = array.reshape(dims).astype(np.float32)
    if offset != len(blob):
        raise WeightsFormatError(f"{len(blob) - offset} trailing bytes")
    return weights
