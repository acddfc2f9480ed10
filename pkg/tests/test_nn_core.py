"""Engine tests: ops against naive oracles, graph plumbing, accounting,
and the binary weights container."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsr import nn_core
from evsr.nn_core import (
    ConvSpec,
    MissingWeight,
    ModelGraph,
    Node,
    NotDivisible,
    ShapeMismatch,
    WeightsFormatError,
    avg_pool,
    conv2d,
    count_macs,
    count_params,
    expected_weight_specs,
    global_branch_gate,
    infer_shapes,
    init_weights,
    load_weights,
    nearest_up,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    run_graph,
    save_weights,
    warp,
)


def oracle_conv2d(x, weights, bias, stride, padding):
    """Six-loop reference convolution (cross-correlation), float64."""
    n, c, h, w = x.shape
    out_ch, _, kh, kw = weights.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, out_ch, h_out, w_out), dtype=np.float64)
    for b in range(n):
        for o in range(out_ch):
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = float(bias[o])
                    for i in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - padding
                                ix = ox * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += float(x[b, i, iy, ix]) * float(
                                        weights[o, i, ky, kx]
                                    )
                    out[b, o, oy, ox] = acc
    return out


def random_conv_case(rng):
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.choice([0, 1])) if k == 3 else 0
    in_ch = int(rng.integers(1, 5))
    out_ch = int(rng.integers(1, 5))
    lo = k if padding == 0 else 1
    h = int(rng.integers(lo, 9))
    w = int(rng.integers(lo, 9))
    n = int(rng.integers(1, 3))
    x = rng.uniform(-3, 3, size=(n, in_ch, h, w)).astype(np.float32)
    weights = rng.uniform(-1, 1, size=(out_ch, in_ch, k, k)).astype(np.float32)
    bias = rng.uniform(-1, 1, size=(out_ch,)).astype(np.float32)
    return x, weights, bias, stride, padding


class TestConv:
    def test_matches_oracle_on_random_cases(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            x, weights, bias, stride, padding = random_conv_case(rng)
            spec = ConvSpec(
                in_ch=x.shape[1], out_ch=weights.shape[0],
                kernel=weights.shape[2:], stride=stride, padding=padding,
                weights=weights, bias=bias,
            )
            got = conv2d(x, spec)
            want = oracle_conv2d(x, weights, bias, stride, padding)
            assert got.dtype == np.float32
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_identity_kernel(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        spec = ConvSpec(1, 1, (1, 1), 1, 0,
                        np.ones((1, 1, 1, 1), np.float32),
                        np.zeros(1, np.float32))
        np.testing.assert_array_equal(conv2d(x, spec), x)

    def test_linearity_with_zero_bias(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (1, 2, 6, 6)).astype(np.float32)
        weights = rng.uniform(-1, 1, (3, 2, 3, 3)).astype(np.float32)
        spec = ConvSpec(2, 3, (3, 3), 1, 1, weights, np.zeros(3, np.float32))
        np.testing.assert_allclose(
            conv2d(5.0 * x, spec), 5.0 * conv2d(x, spec), rtol=1e-5, atol=1e-5
        )

    def test_channel_count_checked(self):
        spec = ConvSpec(2, 1, (1, 1), 1, 0,
                        np.ones((1, 2, 1, 1), np.float32),
                        np.zeros(1, np.float32))
        with pytest.raises(ShapeMismatch):
            conv2d(np.zeros((1, 3, 4, 4), np.float32), spec)

    def test_too_small_input_rejected(self):
        spec = ConvSpec(1, 1, (3, 3), 1, 0,
                        np.ones((1, 1, 3, 3), np.float32),
                        np.zeros(1, np.float32))
        with pytest.raises(ShapeMismatch):
            conv2d(np.zeros((1, 1, 2, 2), np.float32), spec)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kernel=(5, 5)),
            dict(stride=3),
            dict(padding=2),
        ],
    )
    def test_spec_validation(self, kwargs):
        base = dict(in_ch=1, out_ch=1, kernel=(3, 3), stride=1, padding=1)
        base.update(kwargs)
        k = base["kernel"]
        with pytest.raises(ShapeMismatch):
            ConvSpec(weights=np.zeros((1, 1) + k, np.float32),
                     bias=np.zeros(1, np.float32), **base)

    def test_weight_shape_validation(self):
        with pytest.raises(ShapeMismatch):
            ConvSpec(1, 2, (3, 3), 1, 1,
                     np.zeros((1, 1, 3, 3), np.float32),
                     np.zeros(2, np.float32))

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-2, 2, (2, 3, 9, 7)).astype(np.float32)
        weights = rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32)
        spec = ConvSpec(3, 4, (3, 3), 1, 1, weights,
                        rng.uniform(-1, 1, 4).astype(np.float32))
        first = conv2d(x, spec)
        second = conv2d(x, spec)
        assert first.tobytes() == second.tobytes()


class TestShuffles:
    def test_unshuffle_channel_order(self):
        # 2x2 block [[1,2],[3,4]] lands as channels (dy, dx): 1,2,3,4.
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        got = pixel_unshuffle(x, 2)
        np.testing.assert_array_equal(got.reshape(4), [1, 2, 3, 4])

    def test_unshuffle_source_channel_slowest(self):
        x = np.stack([np.full((2, 2), 10, np.float32),
                      np.full((2, 2), 20, np.float32)])[None]
        got = pixel_unshuffle(x, 2)
        assert got.shape == (1, 8, 1, 1)
        np.testing.assert_array_equal(
            got.reshape(8), [10, 10, 10, 10, 20, 20, 20, 20]
        )

    def test_shuffle_places_dx_fastest(self):
        x = np.array([1, 2, 3, 4], np.float32).reshape(1, 4, 1, 1)
        got = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(got.reshape(2, 2), [[1, 2], [3, 4]])

    @given(
        n=st.integers(1, 2), c=st.integers(1, 3),
        h=st.integers(1, 4), w=st.integers(1, 4),
        r=st.integers(1, 3),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=40, deadline=None)
    def test_shuffle_inverts_unshuffle_exactly(self, n, c, h, w, r, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-5, 5, (n, c, h * r, w * r)).astype(np.float32)
        assert pixel_shuffle(pixel_unshuffle(x, r), r).tobytes() == x.tobytes()

    def test_unshuffle_inverts_shuffle_exactly(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-5, 5, (1, 18, 3, 5)).astype(np.float32)
        assert pixel_unshuffle(pixel_shuffle(x, 3), 3).tobytes() == x.tobytes()

    def test_divisibility_errors(self):
        with pytest.raises(NotDivisible):
            pixel_unshuffle(np.zeros((1, 1, 3, 4), np.float32), 2)
        with pytest.raises(NotDivisible):
            pixel_shuffle(np.zeros((1, 6, 2, 2), np.float32), 2)


class TestElementwiseAndLayout:
    def test_relu(self):
        x = np.array([-1.5, 0.0, 2.5], np.float32).reshape(1, 1, 1, 3)
        np.testing.assert_array_equal(relu(x).reshape(3), [0.0, 0.0, 2.5])

    def test_avg_pool_exact(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        got = avg_pool(x, 2)
        np.testing.assert_array_equal(
            got.reshape(2, 2), [[2.5, 4.5], [10.5, 12.5]]
        )

    def test_avg_pool_ceil_replicates_edge(self):
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
        got = avg_pool(x, 2)
        np.testing.assert_allclose(
            got.reshape(2, 2), [[3.0, 4.5], [7.5, 9.0]]
        )

    def test_nearest_up_with_crop(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2)
        got = nearest_up(x, 2, out_hw=(3, 3))
        np.testing.assert_array_equal(
            got.reshape(3, 3), [[1, 1, 2], [1, 1, 2], [3, 3, 4]]
        )

    def test_nearest_up_index_law(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, (1, 2, 3, 4)).astype(np.float32)
        got = nearest_up(x, 3)
        for y in range(9):
            for xx in range(12):
                np.testing.assert_array_equal(
                    got[0, :, y, xx], x[0, :, y // 3, xx // 3]
                )


class TestWarp:
    def test_zero_flow_is_identity(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (2, 3, 5, 6)).astype(np.float32)
        flow = np.zeros((2, 2, 5, 6), np.float32)
        np.testing.assert_array_equal(warp(x, flow), x)

    def test_integer_flow_shifts(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        flow = np.zeros((1, 2, 4, 4), np.float32)
        flow[:, 0] = 1.0  # sample one pixel to the right
        got = warp(x, flow)
        np.testing.assert_array_equal(got[0, 0, 0], [1, 2, 3, 3])

    def test_half_pixel_flow_averages(self):
        x = np.array([[0.0, 2.0]], np.float32).reshape(1, 1, 1, 2)
        flow = np.zeros((1, 2, 1, 2), np.float32)
        flow[:, 0] = 0.5
        got = warp(x, flow)
        np.testing.assert_allclose(got.reshape(2), [1.0, 2.0])

    def test_border_clamped(self):
        x = np.array([[5.0, 7.0]], np.float32).reshape(1, 1, 1, 2)
        flow = np.full((1, 2, 1, 2), -10.0, np.float32)
        got = warp(x, flow)
        np.testing.assert_array_equal(got.reshape(2), [5.0, 5.0])

    def test_flow_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            warp(np.zeros((1, 1, 4, 4), np.float32),
                 np.zeros((1, 1, 4, 4), np.float32))


class TestGlobalBranch:
    def test_gate_math(self):
        # Source variance per channel: [0, 1] for a +-1 split plane.
        src = np.zeros((1, 2, 2, 2), np.float32)
        src[0, 1] = np.array([[1, -1], [1, -1]], np.float32)
        target = np.ones((1, 2, 2, 2), np.float32)
        weight = np.eye(2, dtype=np.float32)
        bias = np.zeros(2, np.float32)
        got = global_branch_gate(src, target, weight, bias)
        want0 = 1.0 / (1.0 + np.exp(-0.0))
        want1 = 1.0 / (1.0 + np.exp(-1.0))
        np.testing.assert_allclose(got[0, 0], want0, rtol=1e-6)
        np.testing.assert_allclose(got[0, 1], want1, rtol=1e-6)

    def test_channel_agreement_enforced(self):
        src = np.zeros((1, 2, 2, 2), np.float32)
        with pytest.raises(ShapeMismatch):
            global_branch_gate(src, np.zeros((1, 3, 2, 2), np.float32),
                               np.eye(2, dtype=np.float32),
                               np.zeros(2, np.float32))


def tiny_graph():
    nodes = (
        Node("conv1", "conv", ("x",),
             dict(in_ch=1, out_ch=4, kernel=(3, 3), stride=1, padding=1)),
        Node("act", "relu", ("conv1",)),
        Node("up", "pixel_shuffle", ("act",), dict(r=2)),
    )
    graph = ModelGraph(nodes=nodes, inputs=("x",), outputs=("up",), weights={})
    return nn_core.with_weights(graph, init_weights(graph, seed=1))


class TestGraph:
    def test_run_and_shapes_agree(self):
        graph = tiny_graph()
        x = np.random.default_rng(0).uniform(0, 1, (1, 1, 6, 8)).astype(np.float32)
        values = run_graph(graph, {"x": x}, all_nodes=True)
        shapes = infer_shapes(graph, {"x": x.shape})
        assert set(values) == set(shapes)
        for name, arr in values.items():
            assert arr.shape == shapes[name], name
        assert values["up"].shape == (1, 1, 12, 16)

    def test_outputs_only_by_default(self):
        graph = tiny_graph()
        out = run_graph(graph, {"x": np.zeros((1, 1, 4, 4), np.float32)})
        assert set(out) == {"up"}

    def test_missing_input_rejected(self):
        with pytest.raises(ShapeMismatch, match="missing graph input"):
            run_graph(tiny_graph(), {})

    def test_missing_weight_names_tensor(self):
        graph = tiny_graph()
        weights = dict(graph.weights)
        del weights["conv1.weight"]
        broken = nn_core.with_weights(graph, weights)
        with pytest.raises(MissingWeight, match="conv1.weight"):
            run_graph(broken, {"x": np.zeros((1, 1, 4, 4), np.float32)})

    def test_duplicate_node_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            ModelGraph(
                nodes=(Node("a", "relu", ("x",)), Node("a", "relu", ("x",))),
                inputs=("x",), outputs=("a",), weights={},
            )

    def test_forward_reference_rejected(self):
        with pytest.raises(ValueError, match="before definition"):
            ModelGraph(
                nodes=(Node("a", "relu", ("b",)), Node("b", "relu", ("x",))),
                inputs=("x",), outputs=("a",), weights={},
            )

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown node kind"):
            Node("a", "dropout", ("x",))

    def test_undeclared_output_rejected(self):
        with pytest.raises(ValueError, match="not produced"):
            ModelGraph(nodes=(), inputs=("x",), outputs=("y",), weights={})

    def test_error_names_node(self):
        nodes = (Node("bad_slice", "slice", ("x",), dict(begin=0, end=9)),)
        graph = ModelGraph(nodes=nodes, inputs=("x",), outputs=("bad_slice",),
                           weights={})
        with pytest.raises(ShapeMismatch, match="bad_slice"):
            run_graph(graph, {"x": np.zeros((1, 2, 2, 2), np.float32)})

    def test_multi_input_graph(self):
        nodes = (
            Node("sum", "add", ("a", "b")),
            Node("gated", "mul", ("sum", "a")),
        )
        graph = ModelGraph(nodes=nodes, inputs=("a", "b"),
                           outputs=("gated",), weights={})
        a = np.full((1, 1, 2, 2), 2.0, np.float32)
        b = np.full((1, 1, 2, 2), 3.0, np.float32)
        out = run_graph(graph, {"a": a, "b": b})["gated"]
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 10.0))

    def test_concat_slice_roundtrip(self):
        nodes = (
            Node("top", "slice", ("x",), dict(begin=0, end=2)),
            Node("rest", "slice", ("x",), dict(begin=2, end=5)),
            Node("joined", "concat", ("top", "rest")),
        )
        graph = ModelGraph(nodes=nodes, inputs=("x",), outputs=("joined",),
                           weights={})
        x = np.random.default_rng(4).uniform(0, 1, (1, 5, 3, 3)).astype(np.float32)
        out = run_graph(graph, {"x": x})["joined"]
        assert out.tobytes() == x.tobytes()


class TestAccounting:
    def test_conv_param_formula(self):
        graph = tiny_graph()
        assert count_params(graph) == 4 * 1 * 3 * 3 + 4

    def test_conv_macs_formula(self):
        graph = tiny_graph()
        # 4*1*3*3 MACs per output pixel on a 6x8 map; shuffle is free.
        assert count_macs(graph, (1, 1, 6, 8)) == 4 * 1 * 3 * 3 * 6 * 8

    def test_strided_conv_macs_use_output_geometry(self):
        nodes = (
            Node("down", "conv", ("x",),
                 dict(in_ch=3, out_ch=8, kernel=(3, 3), stride=2, padding=1)),
        )
        graph = ModelGraph(nodes=nodes, inputs=("x",), outputs=("down",),
                           weights={})
        assert count_macs(graph, (1, 3, 10, 10)) == 8 * 3 * 3 * 3 * 5 * 5

    def test_gate_params_counted_but_free(self):
        nodes = (
            Node("gate", "global_branch", ("x", "x"), dict(channels=6)),
        )
        graph = ModelGraph(nodes=nodes, inputs=("x",), outputs=("gate",),
                           weights={})
        assert count_params(graph) == 6 * 6 + 6
        assert count_macs(graph, (1, 6, 4, 4)) == 0

    def test_multi_input_macs_need_mapping(self):
        nodes = (Node("sum", "add", ("a", "b")),)
        graph = ModelGraph(nodes=nodes, inputs=("a", "b"), outputs=("sum",),
                           weights={})
        with pytest.raises(ShapeMismatch):
            count_macs(graph, (1, 1, 4, 4))
        shape = {"a": (1, 1, 4, 4), "b": (1, 1, 4, 4)}
        assert count_macs(graph, shape) == 0


GOLDEN_CONTAINER = (
    b"EVSRW\x00"          # magic
    b"\x01\x00"            # version 1
    b"\x01\x00\x00\x00"    # one tensor
    b"\x08\x00a.weight"    # name
    b"\x01"                # rank 1
    b"\x01\x00\x00\x00"    # dim 1
    b"\x00\x00\x80\x3f"    # 1.0f
)


class TestWeightsContainer:
    def test_golden_bytes(self, tmp_path):
        path = tmp_path / "w.evsrw"
        written = save_weights(path, {"a.weight": np.array([1.0], np.float32)})
        assert path.read_bytes() == GOLDEN_CONTAINER
        assert written == len(GOLDEN_CONTAINER)

    def test_golden_bytes_load(self, tmp_path):
        path = tmp_path / "w.evsrw"
        path.write_bytes(GOLDEN_CONTAINER)
        weights = load_weights(path)
        assert list(weights) == ["a.weight"]
        np.testing.assert_array_equal(weights["a.weight"],
                                      np.array([1.0], np.float32))

    def test_round_trip_preserves_order_and_values(self, tmp_path):
        rng = np.random.default_rng(9)
        original = {
            "head.weight": rng.normal(size=(4, 3, 3, 3)).astype(np.float32),
            "head.bias": rng.normal(size=(4,)).astype(np.float32),
            "body.0.seq1.weight": rng.normal(size=(8, 4, 1, 1)).astype(np.float32),
        }
        path = tmp_path / "w.evsrw"
        save_weights(path, original)
        loaded = load_weights(path)
        assert list(loaded) == list(original)
        for name in original:
            assert loaded[name].dtype == np.float32
            np.testing.assert_array_equal(loaded[name], original[name])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.evsrw"
        path.write_bytes(b"NOTIT\x00" + GOLDEN_CONTAINER[6:])
        with pytest.raises(WeightsFormatError, match="magic"):
            load_weights(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "w.evsrw"
        path.write_bytes(GOLDEN_CONTAINER[:6] + b"\x02\x00" + GOLDEN_CONTAINER[8:])
        with pytest.raises(WeightsFormatError, match="version"):
            load_weights(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "w.evsrw"
        path.write_bytes(GOLDEN_CONTAINER[:-2])
        with pytest.raises(WeightsFormatError):
            load_weights(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "w.evsrw"
        path.write_bytes(GOLDEN_CONTAINER + b"\x00")
        with pytest.raises(WeightsFormatError, match="trailing"):
            load_weights(path)


class TestInit:
    def test_expected_specs_cover_graph(self):
        graph = tiny_graph()
        specs = expected_weight_specs(graph)
        assert set(specs) == {"conv1.weight", "conv1.bias"}
        assert specs["conv1.weight"][0] == (4, 1, 3, 3)

    def test_deterministic_per_seed(self):
        graph = tiny_graph()
        a = init_weights(graph, seed=42)
        b = init_weights(graph, seed=42)
        c = init_weights(graph, seed=43)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a)

    def test_fan_in_bound(self):
        graph = tiny_graph()
        weights = init_weights(graph, seed=0)
        bound = 1.0 / np.sqrt(1 * 3 * 3)
        assert np.abs(weights["conv1.weight"]).max() <= bound
