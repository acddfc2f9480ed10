"""Structural reparameterization: multi-branch blocks that collapse to one
3x3 convolution.

A rep block sums the outputs of parallel linear branches over the same
input (all stride 1, all producing the input geometry):

  plain_3x3          ordinary 3x3 conv, zero pad 1
  plain_1x1          1x1 conv (a 3x3 with only the centre tap)
  seq_1x1_3x3        1x1 conv (channel expand) followed by a 3x3 conv
  scaled_fixed       per-channel learned scale on a fixed 3x3 stencil
                     (edge/curvature extractors), depthwise, no bias
  identity           the input itself (centre-tap delta kernel)

Because every branch is affine in the input, the sum is affine too, so the
whole block equals a single 3x3 conv whose kernel and bias are computed
here in float64 and stored as float32.

Border handling makes the equality exact and not merely an interior
approximation: the training-form sequential branch zero-pads the *input*
by one pixel, applies the 1x1 conv with its bias across the padded field
(so the pad ring holds exactly b1), then runs the 3x3 stage without
padding.  Folding b1 through the 3x3 kernel into the fused bias then
reproduces border pixels exactly, and fused inference needs only the
standard zero-pad conv.

Branch tensors live under the owning node id, e.g. "body.0.seq1.weight";
fusing a graph rewrites each block into a conv node of the same id with
plain "<id>.weight" / "<id>.bias" tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .nn_core import (
    ChannelMismatch,
    ConvSpec,
    MissingWeight,
    ModelGraph,
    Node,
    ShapeMismatch,
    conv2d,
)

STENCILS: dict[str, np.ndarray] = {
    "sobel_x": np.array(
        [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]], dtype=np.float64
    ),
    "sobel_y": np.array(
        [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]], dtype=np.float64
    ),
    "laplacian": np.array(
        [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]], dtype=np.float64
    ),
}

# Branch descriptors as they appear in rep_block node attrs ("branches"):
#   ("plain_3x3",) ("plain_1x1",) ("seq_1x1_3x3", mid) ("scaled_fixed", name)
#   ("identity",)
_FULL_BRANCH_SET = (
    ("plain_3x3",),
    ("plain_1x1",),
    ("seq_1x1_3x3", None),  # mid filled in by callers
    ("scaled_fixed", "sobel_x"),
    ("scaled_fixed", "sobel_y"),
    ("scaled_fixed", "laplacian"),
    ("identity",),
)


def _branch_tag(branch: tuple) -> str:
    kind = branch[0]
    if kind == "plain_3x3":
        return "conv3"
    if kind == "plain_1x1":
        return "conv1"
    if kind == "seq_1x1_3x3":
        return "seq"
    if kind == "scaled_fixed":
        return branch[1]
    if kind == "identity":
        return "identity"
    raise ValueError(f"unknown branch kind {branch[0]!r}")


def standard_branches(mid_ch: int) -> tuple[tuple, ...]:
    """The full branch complement with the given sequential mid width."""
    return (
        ("plain_3x3",),
        ("plain_1x1",),
        ("seq_1x1_3x3", mid_ch),
        ("scaled_fixed", "sobel_x"),
        ("scaled_fixed", "sobel_y"),
        ("scaled_fixed", "laplacian"),
        ("identity",),
    )


# ------------------------------------------------------------ fusion math ---

def expand_1x1_to_3x3(weights: np.ndarray, bias: np.ndarray):
    """Embed a 1x1 kernel at the centre of a zero 3x3 kernel."""
    out_ch, in_ch = weights.shape[0], weights.shape[1]
    if weights.shape[2:] != (1, 1):
        raise ShapeMismatch(f"expected a 1x1 kernel, got {weights.shape}")
    k3 = np.zeros((out_ch, in_ch, 3, 3), dtype=np.float64)
    k3[:, :, 1, 1] = weights[:, :, 0, 0].astype(np.float64)
    return k3, bias.astype(np.float64)


def fuse_seq_1x1_3x3(k1: np.ndarray, b1: np.ndarray,
                     k2: np.ndarray, b2: np.ndarray):
    """Collapse 1x1 (k1, b1) followed by 3x3 (k2, b2) into one 3x3 conv.

    K[o, i, u, v] = sum_m k2[o, m, u, v] * k1[m, i]
    b[o]          = b2[o] + sum_{m, u, v} k2[o, m, u, v] * b1[m]
    """
    mid = k1.shape[0]
    if k2.shape[1] != mid:
        raise ChannelMismatch(
            f"1x1 stage emits {mid} channels, 3x3 stage expects {k2.shape[1]}"
        )
    k1m = k1.astype(np.float64)[:, :, 0, 0]               # (mid, in)
    k2m = k2.astype(np.float64)                           # (out, mid, 3, 3)
    fused_k = np.einsum("omuv,mi->oiuv", k2m, k1m)
    fused_b = b2.astype(np.float64) + np.einsum(
        "omuv,m->o", k2m, b1.astype(np.float64)
    )
    return fused_k, fused_b


def fuse_scaled_fixed(scale: np.ndarray, stencil) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel scale on a fixed stencil as a depthwise-diagonal 3x3."""
    if isinstance(stencil, str):
        try:
            stencil = STENCILS[stencil]
        except KeyError:
            raise ValueError(f"unknown stencil {stencil!r}") from None
    stencil = np.asarray(stencil, dtype=np.float64)
    if stencil.shape != (3, 3):
        raise ShapeMismatch(f"stencil must be 3x3, got {stencil.shape}")
    channels = scale.shape[0]
    k3 = np.zeros((channels, channels, 3, 3), dtype=np.float64)
    idx = np.arange(channels)
    k3[idx, idx] = scale.astype(np.float64)[:, None, None] * stencil
    return k3, np.zeros(channels, dtype=np.float64)


def identity_kernel(channels: int) -> np.ndarray:
    """Centre-tap delta: conv with this kernel is the identity map."""
    k3 = np.zeros((channels, channels, 3, 3), dtype=np.float64)
    k3[np.arange(channels), np.arange(channels), 1, 1] = 1.0
    return k3


# ------------------------------------------------------------------ block ---

@dataclass(frozen=True)
class RepBlock:
    """A multi-branch block: geometry, branch list, and branch tensors.

    weights maps tag-relative names ("conv3.weight", "seq1.bias",
    "sobel_x.weight", ...) to arrays.
    """

    in_ch: int
    out_ch: int
    branches: tuple[tuple, ...]
    weights: Mapping[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "branches",
                           tuple(tuple(b) for b in self.branches))
        tags = [_branch_tag(b) for b in self.branches]
        if len(tags) != len(set(tags)):
            raise ValueError(f"duplicate branch kinds in {tags}")
        for branch in self.branches:
            if branch[0] in ("scaled_fixed", "identity") and \
                    self.in_ch != self.out_ch:
                raise ChannelMismatch(
                    f"{branch[0]} branch needs in_ch == out_ch, "
                    f"got {self.in_ch} != {self.out_ch}"
                )


@dataclass(frozen=True)
class FusedConv:
    """The single 3x3 conv (stride 1, zero pad 1) a block collapses to."""

    weights: np.ndarray
    bias: np.ndarray

    def to_conv_spec(self) -> ConvSpec:
        out_ch, in_ch = self.weights.shape[:2]
        return ConvSpec(in_ch=in_ch, out_ch=out_ch, kernel=(3, 3), stride=1,
                        padding=1, weights=self.weights, bias=self.bias)


def _block_weight(block_weights: Mapping[str, np.ndarray], name: str):
    try:
        return block_weights[name]
    except KeyError:
        raise MissingWeight(name) from None


def _branch_kernel_bias(block: RepBlock, branch: tuple):
    """float64 (kernel, bias) of one branch as an equivalent padded 3x3."""
    kind = branch[0]
    w = block.weights
    if kind == "plain_3x3":
        return (
            _block_weight(w, "conv3.weight").astype(np.float64),
            _block_weight(w, "conv3.bias").astype(np.float64),
        )
    if kind == "plain_1x1":
        return expand_1x1_to_3x3(
            _block_weight(w, "conv1.weight"), _block_weight(w, "conv1.bias")
        )
    if kind == "seq_1x1_3x3":
        return fuse_seq_1x1_3x3(
            _block_weight(w, "seq1.weight"), _block_weight(w, "seq1.bias"),
            _block_weight(w, "seq2.weight"), _block_weight(w, "seq2.bias"),
        )
    if kind == "scaled_fixed":
        return fuse_scaled_fixed(
            _block_weight(w, f"{branch[1]}.weight"), branch[1]
        )
    if kind == "identity":
        return identity_kernel(block.in_ch), np.zeros(block.out_ch, np.float64)
    raise ValueError(f"unknown branch kind {kind!r}")


def fuse_block(block: RepBlock) -> FusedConv:
    """Sum the per-branch equivalent kernels/biases; float64 accumulation."""
    total_k = np.zeros((block.out_ch, block.in_ch, 3, 3), dtype=np.float64)
    total_b = np.zeros(block.out_ch, dtype=np.float64)
    for branch in block.branches:
        k, b = _branch_kernel_bias(block, branch)
        if k.shape != total_k.shape:
            raise ChannelMismatch(
                f"branch {branch[0]} kernel {k.shape} does not match block "
                f"({block.out_ch}, {block.in_ch}, 3, 3)"
            )
        total_k += k
        total_b += b
    return FusedConv(weights=total_k.astype(np.float32),
                     bias=total_b.astype(np.float32))


# ----------------------------------------------------- training-form eval ---

def rep_block_forward(x: np.ndarray, node: Node,
                      weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate the training form: run every branch, sum the results."""
    block = block_from_graph_weights(node, weights)
    out = None
    for branch in block.branches:
        y = _branch_forward(x, block, branch)
        out = y if out is None else out + y
    if out is None:
        raise ValueError(f"rep_block {node.id!r} has no branches")
    return out


def _branch_forward(x: np.ndarray, block: RepBlock, branch: tuple):
    kind = branch[0]
    w = block.weights
    if kind == "plain_3x3":
        return conv2d(x, ConvSpec(
            block.in_ch, block.out_ch, (3, 3), 1, 1,
            _block_weight(w, "conv3.weight").astype(np.float32),
            _block_weight(w, "conv3.bias").astype(np.float32),
        ))
    if kind == "plain_1x1":
        return conv2d(x, ConvSpec(
            block.in_ch, block.out_ch, (1, 1), 1, 0,
            _block_weight(w, "conv1.weight").astype(np.float32),
            _block_weight(w, "conv1.bias").astype(np.float32),
        ))
    if kind == "seq_1x1_3x3":
        mid = branch[1]
        # Zero-pad the input first so the 1x1 bias fills the pad ring; the
        # 3x3 stage then runs unpadded.  This makes fusion border-exact.
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        hidden = conv2d(padded, ConvSpec(
            block.in_ch, mid, (1, 1), 1, 0,
            _block_weight(w, "seq1.weight").astype(np.float32),
            _block_weight(w, "seq1.bias").astype(np.float32),
        ))
        return conv2d(hidden, ConvSpec(
            mid, block.out_ch, (3, 3), 1, 0,
            _block_weight(w, "seq2.weight").astype(np.float32),
            _block_weight(w, "seq2.bias").astype(np.float32),
        ))
    if kind == "scaled_fixed":
        k3, b = fuse_scaled_fixed(_block_weight(w, f"{branch[1]}.weight"),
                                  branch[1])
        return conv2d(x, ConvSpec(
            block.in_ch, block.out_ch, (3, 3), 1, 1,
            k3.astype(np.float32), b.astype(np.float32),
        ))
    if kind == "identity":
        return x
    raise ValueError(f"unknown branch kind {kind!r}")


def block_from_graph_weights(node: Node,
                             weights: Mapping[str, np.ndarray]) -> RepBlock:
    """Collect a node's branch tensors out of the flat graph weight map."""
    attrs = node.attrs
    branches = tuple(tuple(b) for b in attrs["branches"])
    local: dict[str, np.ndarray] = {}
    for branch in branches:
        for name in _branch_tensor_names(branch):
            local[name] = _block_weight(weights, f"{node.id}.{name}")
    return RepBlock(in_ch=attrs["in_ch"], out_ch=attrs["out_ch"],
                    branches=branches, weights=local)


def _branch_tensor_names(branch: tuple) -> tuple[str, ...]:
    kind = branch[0]
    if kind == "plain_3x3":
        return ("conv3.weight", "conv3.bias")
    if kind == "plain_1x1":
        return ("conv1.weight", "conv1.bias")
    if kind == "seq_1x1_3x3":
        return ("seq1.weight", "seq1.bias", "seq2.weight", "seq2.bias")
    if kind == "scaled_fixed":
        return (f"{branch[1]}.weight",)
    if kind == "identity":
        return ()
    raise ValueError(f"unknown branch kind {kind!r}")


# -------------------------------------------------------- graph transform ---

def _fused_node(node: Node) -> Node:
    return Node(
        node.id, "conv", node.inputs,
        dict(in_ch=node.attrs["in_ch"], out_ch=node.attrs["out_ch"],
             kernel=(3, 3), stride=1, padding=1),
    )


def fused_structure(graph: ModelGraph) -> ModelGraph:
    """The deployment-form topology only; weights are left untouched.

    Sufficient for parameter/MAC accounting of the fused form without
    requiring trained tensors."""
    nodes = tuple(
        _fused_node(node) if node.kind == "rep_block" else node
        for node in graph.nodes
    )
    return replace(graph, nodes=nodes, form="fused")


def fuse_graph(graph: ModelGraph) -> ModelGraph:
    """Replace every rep_block with its fused conv; idempotent."""
    if not any(node.kind == "rep_block" for node in graph.nodes):
        return replace(graph, form="fused")

    new_nodes: list[Node] = []
    new_weights = dict(graph.weights)
    for node in graph.nodes:
        if node.kind != "rep_block":
            new_nodes.append(node)
            continue
        block = block_from_graph_weights(node, graph.weights)
        fused = fuse_block(block)
        for branch in block.branches:
            for name in _branch_tensor_names(branch):
                new_weights.pop(f"{node.id}.{name}", None)
        new_weights[f"{node.id}.weight"] = fused.weights
        new_weights[f"{node.id}.bias"] = fused.bias
        new_nodes.append(_fused_node(node))
    return ModelGraph(nodes=tuple(new_nodes), inputs=graph.inputs,
                      outputs=graph.outputs, weights=new_weights,
                      form="fused")


# ------------------------------------------------------------- accounting ---

def rep_block_param_count(attrs: Mapping) -> int:
    """Training-form learnable scalars over all branches."""
    in_ch, out_ch = attrs["in_ch"], attrs["out_ch"]
    total = 0
    for branch in attrs["branches"]:
        kind = branch[0]
        if kind == "plain_3x3":
            total += out_ch * in_ch * 9 + out_ch
        elif kind == "plain_1x1":
            total += out_ch * in_ch + out_ch
        elif kind == "seq_1x1_3x3":
            mid = branch[1]
            total += mid * in_ch + mid + out_ch * mid * 9 + out_ch
        elif kind == "scaled_fixed":
            total += out_ch
        elif kind == "identity":
            pass
        else:
            raise ValueError(f"unknown branch kind {kind!r}")
    return total


def rep_block_macs(attrs: Mapping, h: int, w: int) -> int:
    """Training-form MACs at output geometry h x w (stride 1, same size).

    The sequential branch's 1x1 stage runs over the zero-padded field, so
    it is charged at (h+2)(w+2); fixed stencils are depthwise."""
    in_ch, out_ch = attrs["in_ch"], attrs["out_ch"]
    total = 0
    for branch in attrs["branches"]:
        kind = branch[0]
        if kind == "plain_3x3":
            total += out_ch * in_ch * 9 * h * w
        elif kind == "plain_1x1":
            total += out_ch * in_ch * h * w
        elif kind == "seq_1x1_3x3":
            mid = branch[1]
            total += mid * in_ch * (h + 2) * (w + 2)
            total += out_ch * mid * 9 * h * w
        elif kind == "scaled_fixed":
            total += out_ch * 9 * h * w
        elif kind == "identity":
            pass
        else:
            raise ValueError(f"unknown branch kind {kind!r}")
    return total


def rep_block_weight_specs(node_id: str, attrs: Mapping):
    """Name -> (shape, fan_in) for the node's branch tensors."""
    in_ch, out_ch = attrs["in_ch"], attrs["out_ch"]
    specs: dict[str, tuple[tuple, int]] = {}
    for branch in attrs["branches"]:
        kind = branch[0]
        if kind == "plain_3x3":
            specs[f"{node_id}.conv3.weight"] = ((out_ch, in_ch, 3, 3), in_ch * 9)
            specs[f"{node_id}.conv3.bias"] = ((out_ch,), in_ch * 9)
        elif kind == "plain_1x1":
            specs[f"{node_id}.conv1.weight"] = ((out_ch, in_ch, 1, 1), in_ch)
            specs[f"{node_id}.conv1.bias"] = ((out_ch,), in_ch)
        elif kind == "seq_1x1_3x3":
            mid = branch[1]
            specs[f"{node_id}.seq1.weight"] = ((mid, in_ch, 1, 1), in_ch)
            specs[f"{node_id}.seq1.bias"] = ((mid,), in_ch)
            specs[f"{node_id}.seq2.weight"] = ((out_ch, mid, 3, 3), mid * 9)
            specs[f"{node_id}.seq2.bias"] = ((out_ch,), mid * 9)
        elif kind == "scaled_fixed":
            specs[f"{node_id}.{branch[1]}.weight"] = ((out_ch,), 9)
        elif kind == "identity":
            pass
        else:
            raise ValueError(f"unknown branch kind {kind!r}")
    return specs
