"""4:2:0 I/O contract tests.

Covered here:
- header parsing: tag handling, defaults, rejection of non-4:2:0 colorspaces
- frame payload layout and truncation detection
- the write->read round trip is byte-exact, including odd geometries
"""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsr.frame_io import (
    ClipHeader,
    Frame420,
    GeometryMismatch,
    MalformedFrameMarker,
    MalformedHeader,
    TruncatedFrame,
    UnsupportedColorspace,
    chroma_dims,
    parse_y4m_header,
    read_clip,
    read_next_frame,
    read_yuv_clip,
    save_clip,
    write_clip,
    write_yuv_clip,
)


def make_frame(width, height, seed=0):
    rng = np.random.default_rng(seed)
    ch, cw = chroma_dims(width, height)
    return Frame420(
        y=rng.integers(0, 256, size=(height, width), dtype=np.uint8),
        cb=rng.integers(0, 256, size=(ch, cw), dtype=np.uint8),
        cr=rng.integers(0, 256, size=(ch, cw), dtype=np.uint8),
    )


class TestHeaderParsing:
    def test_full_header(self):
        stream = io.BytesIO(b"YUV4MPEG2 W640 H360 F30:1 C420mpeg2\nFRAME\n")
        header = parse_y4m_header(stream)
        assert (header.width, header.height) == (640, 360)
        assert (header.fps_num, header.fps_den) == (30, 1)

    def test_missing_colorspace_defaults_to_420(self):
        header = parse_y4m_header(io.BytesIO(b"YUV4MPEG2 W2 H2 F24:1\n"))
        assert (header.width, header.height, header.fps_num) == (2, 2, 24)

    def test_c444_rejected(self):
        with pytest.raises(UnsupportedColorspace):
            parse_y4m_header(io.BytesIO(b"YUV4MPEG2 W640 H360 F30:1 C444\n"))

    def test_ten_bit_rejected(self):
        with pytest.raises(UnsupportedColorspace):
            parse_y4m_header(io.BytesIO(b"YUV4MPEG2 W640 H360 F30:1 C420p10\n"))

    def test_bad_magic(self):
        with pytest.raises(MalformedHeader):
            parse_y4m_header(io.BytesIO(b"YUVMPEG W2 H2\n"))

    def test_missing_width(self):
        with pytest.raises(MalformedHeader):
            parse_y4m_header(io.BytesIO(b"YUV4MPEG2 H360 F30:1\n"))

    def test_missing_height(self):
        with pytest.raises(MalformedHeader):
            parse_y4m_header(io.BytesIO(b"YUV4MPEG2 W640 F30:1\n"))

    def test_non_integer_width(self):
        with pytest.raises(MalformedHeader):
            parse_y4m_header(io.BytesIO(b"YUV4MPEG2 Wfoo H360\n"))

    def test_unknown_tags_ignored(self):
        header = parse_y4m_header(
            io.BytesIO(b"YUV4MPEG2 W4 H4 F25:1 Ip A1:1 Xsome=thing C420jpeg\n")
        )
        assert (header.width, header.height) == (4, 4)

    def test_missing_fps_defaults(self):
        header = parse_y4m_header(io.BytesIO(b"YUV4MPEG2 W4 H4\n"))
        assert (header.fps_num, header.fps_den) == (25, 1)

    def test_empty_stream(self):
        with pytest.raises(MalformedHeader):
            parse_y4m_header(io.BytesIO(b""))


class TestFramePayload:
    def test_two_by_two_layout(self):
        stream = io.BytesIO(
            b"YUV4MPEG2 W2 H2 F24:1\nFRAME\n" + bytes([10, 20, 30, 40, 128, 129])
        )
        header = parse_y4m_header(stream)
        frame = read_next_frame(stream, header)
        assert frame.y.tolist() == [[10, 20], [30, 40]]
        assert frame.cb.tolist() == [[128]]
        assert frame.cr.tolist() == [[129]]

    def test_no_frames_gives_end_of_stream(self):
        stream = io.BytesIO(b"YUV4MPEG2 W2 H2 F24:1\n")
        header = parse_y4m_header(stream)
        assert read_next_frame(stream, header) is None

    def test_short_payload_raises(self):
        stream = io.BytesIO(b"YUV4MPEG2 W2 H2 F24:1\nFRAME\n" + bytes(5))
        header = parse_y4m_header(stream)
        with pytest.raises(TruncatedFrame):
            read_next_frame(stream, header)

    def test_frame_marker_with_parameters_accepted(self):
        stream = io.BytesIO(b"YUV4MPEG2 W2 H2\nFRAME Xtag\n" + bytes(6))
        header = parse_y4m_header(stream)
        assert read_next_frame(stream, header) is not None

    def test_garbage_marker_rejected(self):
        stream = io.BytesIO(b"YUV4MPEG2 W2 H2\nFRAMEX\n" + bytes(6))
        header = parse_y4m_header(stream)
        with pytest.raises(MalformedFrameMarker):
            read_next_frame(stream, header)

    @pytest.mark.parametrize("w,h", [(2, 2), (3, 3), (5, 2), (2, 5), (7, 9)])
    def test_payload_size_formula(self, w, h):
        header = ClipHeader(width=w, height=h)
        ch, cw = chroma_dims(w, h)
        assert header.frame_payload_bytes == w * h + 2 * ch * cw


class TestWriteClip:
    def test_round_trip_three_frames(self):
        frames = [make_frame(4, 4, seed=i) for i in range(3)]
        header = ClipHeader(width=4, height=4, fps_num=30, fps_den=1)
        sink = io.BytesIO()
        count = write_clip(frames, header, sink)
        assert count == len(sink.getvalue())

        sink.seek(0)
        parsed = parse_y4m_header(sink)
        out = []
        while True:
            frame = read_next_frame(sink, parsed)
            if frame is None:
                break
            out.append(frame)
        assert out == frames

    def test_empty_clip_is_header_only(self):
        sink = io.BytesIO()
        write_clip([], ClipHeader(width=8, height=6), sink)
        sink.seek(0)
        parsed = parse_y4m_header(sink)
        assert (parsed.width, parsed.height) == (8, 6)
        assert read_next_frame(sink, parsed) is None

    def test_wrong_geometry_rejected(self):
        sink = io.BytesIO()
        with pytest.raises(GeometryMismatch):
            write_clip([make_frame(4, 4)], ClipHeader(width=6, height=4), sink)


@settings(max_examples=40, deadline=None)
@given(
    width=st.integers(min_value=2, max_value=33),
    height=st.integers(min_value=2, max_value=33),
    n_frames=st.integers(min_value=0, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_round_trip_fuzzed_geometries(width, height, n_frames, seed):
    """write -> read reproduces every sample bit-exactly, odd sizes included."""
    frames = [make_frame(width, height, seed=seed + i) for i in range(n_frames)]
    header = ClipHeader(width=width, height=height, fps_num=24, fps_den=1)
    sink = io.BytesIO()
    write_clip(frames, header, sink)
    sink.seek(0)
    parsed = parse_y4m_header(sink)
    assert (parsed.width, parsed.height) == (width, height)
    out = []
    while True:
        frame = read_next_frame(sink, parsed)
        if frame is None:
            break
        out.append(frame)
    assert out == frames


class TestFileHelpers:
    def test_save_and_read_clip(self, tmp_path):
        frames = [make_frame(6, 4, seed=i) for i in range(2)]
        path = tmp_path / "clip.y4m"
        save_clip(path, frames, fps=(30, 1))
        header, out = read_clip(path)
        assert header.frame_count == 2
        assert (header.fps_num, header.fps_den) == (30, 1)
        assert out == frames

    def test_raw_yuv_round_trip(self, tmp_path):
        frames = [make_frame(5, 3, seed=i) for i in range(3)]
        path = tmp_path / "clip.yuv"
        write_yuv_clip(path, frames)
        header, out = read_yuv_clip(path, width=5, height=3)
        assert header.frame_count == 3
        assert out == frames

    def test_raw_yuv_truncated(self, tmp_path):
        path = tmp_path / "clip.yuv"
        path.write_bytes(bytes(10))
        with pytest.raises(TruncatedFrame):
            read_yuv_clip(path, width=4, height=4)

    def test_save_empty_needs_header(self, tmp_path):
        with pytest.raises(GeometryMismatch):
            save_clip(tmp_path / "x.y4m", [])


class TestFrame420Invariants:
    def test_chroma_sizing_enforced(self):
        with pytest.raises(GeometryMismatch):
            Frame420(
                y=np.zeros((4, 4), dtype=np.uint8),
                cb=np.zeros((3, 2), dtype=np.uint8),
                cr=np.zeros((2, 2), dtype=np.uint8),
            )

    def test_minimum_size(self):
        with pytest.raises(GeometryMismatch):
            Frame420(
                y=np.zeros((1, 4), dtype=np.uint8),
                cb=np.zeros((1, 2), dtype=np.uint8),
                cr=np.zeros((1, 2), dtype=np.uint8),
            )

    def test_planes_are_immutable(self):
        frame = make_frame(4, 4)
        with pytest.raises(ValueError):
            frame.y[0, 0] = 1
