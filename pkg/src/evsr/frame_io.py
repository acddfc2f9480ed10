"""Uncompressed 4:2:0 video I/O.

Two on-disk forms are supported:

- Y4M streams: text header line (magic ``YUV4MPEG2``, tags ``W``/``H``/``F``/``C``),
  then frames introduced by ``FRAME`` lines with raw planar payloads.
- Headerless planar YUV: Y then Cb then Cr per frame, no delimiters; the caller
  must supply geometry.

Only 8-bit 4:2:0 is handled.  Higher bit depths and other subsamplings are
rejected rather than converted.  Odd dimensions use ceiling chroma sizing, so
the payload of a WxH frame is always W*H + 2*ceil(W/2)*ceil(H/2) bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO, Iterable, Optional

import numpy as np


class FrameIOError(Exception):
    """Base class for 4:2:0 I/O failures."""


class MalformedHeader(FrameIOError):
    """Stream does not start with a parseable Y4M header."""


class UnsupportedColorspace(FrameIOError):
    """Y4M colorspace tag is not 8-bit 4:2:0."""


class TruncatedFrame(FrameIOError):
    """Stream ended in the middle of a frame payload."""


class MalformedFrameMarker(FrameIOError):
    """Expected a FRAME line, found something else."""


class GeometryMismatch(FrameIOError):
    """Frame dimensions disagree with the declared geometry."""


# Y4M colorspace tags that mean "8-bit 4:2:0" (they differ only in chroma
# siting, which raw sample I/O does not need to distinguish).
_C420_TAGS = {"C420", "C420jpeg", "C420mpeg2", "C420paldv"}

_MAX_HEADER_BYTES = 4096


def chroma_dims(width: int, height: int) -> tuple[int, int]:
    """(rows, cols) of each chroma plane for a width x height luma plane."""
    return (height + 1) // 2, (width + 1) // 2


@dataclass(frozen=True)
class ClipHeader:
    """Geometry and timing shared by every frame of a clip."""

    width: int
    height: int
    fps_num: int = 25
    fps_den: int = 1
    frame_count: Optional[int] = None  # None when the stream length is unknown

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise MalformedHeader(
                f"luma geometry {self.width}x{self.height} below the 2x2 minimum"
            )
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise MalformedHeader(
                f"frame rate {self.fps_num}:{self.fps_den} must be positive"
            )

    @property
    def frame_payload_bytes(self) -> int:
        ch, cw = chroma_dims(self.width, self.height)
        return self.width * self.height + 2 * ch * cw

    @property
    def fps(self) -> float:
        return self.fps_num / self.fps_den


@dataclass(frozen=True, eq=False)
class Frame420:
    """One 8-bit YCbCr 4:2:0 picture; immutable after construction."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        for name in ("y", "cb", "cr"):
            plane = getattr(self, name)
            if plane.dtype != np.uint8 or plane.ndim != 2:
                raise GeometryMismatch(f"plane {name} must be a 2-D uint8 array")
            locked = np.ascontiguousarray(plane)
            locked.setflags(write=False)
            object.__setattr__(self, name, locked)
        h, w = self.y.shape
        if w < 2 or h < 2:
            raise GeometryMismatch(f"luma plane {w}x{h} below the 2x2 minimum")
        expect = chroma_dims(w, h)
        if self.cb.shape != expect or self.cr.shape != expect:
            raise GeometryMismatch(
                f"chroma planes {self.cb.shape}/{self.cr.shape} do not match "
                f"ceil-half sizing {expect} for {w}x{h} luma"
            )

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame420):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.cb, other.cb)
            and np.array_equal(self.cr, other.cr)
        )

    __hash__ = None


def _read_line(stream: BinaryIO, what: str) -> bytes:
    """Read up to a newline; empty bytes mean EOF."""
    line = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            if line:
                raise MalformedHeader(f"unterminated {what} line")
            return b""
        if ch == b"\n":
            return bytes(line)
        line.append(ch[0])
        if len(line) > _MAX_HEADER_BYTES:
            raise MalformedHeader(f"{what} line exceeds {_MAX_HEADER_BYTES} bytes")


def parse_y4m_header(stream: BinaryIO) -> ClipHeader:
    """Parse the stream header and leave the cursor at the first FRAME line.

    Colorspace tags outside the C420 family are rejected; a missing C tag
    defaults to 4:2:0 per common muxer behavior.  The F tag defaults to 25:1
    when absent.
    """
    line = _read_line(stream, "header")
    if not line:
        raise MalformedHeader("empty stream")
    fields = line.split(b" ")
    if fields[0] != b"YUV4MPEG2":
        raise MalformedHeader(f"bad magic {fields[0]!r}")

    width = height = None
    fps_num, fps_den = 25, 1
    for tag in fields[1:]:
        if not tag:
            continue
        key, val = chr(tag[0]), tag[1:].decode("ascii", errors="replace")
        if key == "W":
            width = _parse_int(val, "W tag")
        elif key == "H":
            height = _parse_int(val, "H tag")
        elif key == "F":
            if ":" in val:
                num, den = val.split(":", 1)
            else:
                num, den = val, "1"
            fps_num = _parse_int(num, "F tag numerator")
            fps_den = _parse_int(den, "F tag denominator")
        elif key == "C":
            if tag.decode("ascii", errors="replace") not in _C420_TAGS:
                raise UnsupportedColorspace(
                    f"colorspace {tag.decode('ascii', errors='replace')!r} "
                    "is not 8-bit 4:2:0"
                )
        # I (interlacing), A (aspect) and X (extensions) are ignored.
    if width is None or height is None:
        raise MalformedHeader("header lacks W or H tag")
    return ClipHeader(width=width, height=height, fps_num=fps_num, fps_den=fps_den)


def _parse_int(text: str, what: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise MalformedHeader(f"{what} is not an integer: {text!r}") from None
    if value <= 0:
        raise MalformedHeader(f"{what} must be positive, got {value}")
    return value


def read_next_frame(stream: BinaryIO, header: ClipHeader) -> Optional[Frame420]:
    """Read one frame, or return None at end of stream."""
    marker = _read_marker(stream)
    if marker is None:
        return None
    payload = stream.read(header.frame_payload_bytes)
    if len(payload) < header.frame_payload_bytes:
        raise TruncatedFrame(
            f"frame payload short: got {len(payload)} of "
            f"{header.frame_payload_bytes} bytes"
        )
    return _frame_from_payload(payload, header.width, header.height)


def _read_marker(stream: BinaryIO) -> Optional[bytes]:
    line = bytearray()
    while True:
        ch = stream.read(1)
        if not ch:
            if line:
                raise MalformedFrameMarker(f"unterminated frame marker {bytes(line)!r}")
            return None
        if ch == b"\n":
            break
        line.append(ch[0])
        if len(line) > _MAX_HEADER_BYTES:
            raise MalformedFrameMarker("frame marker line too long")
    line = bytes(line)
    # "FRAME" alone or "FRAME <params>"; anything else is a framing error.
    if line != b"FRAME" and not line.startswith(b"FRAME "):
        raise MalformedFrameMarker(f"expected FRAME line, got {line!r}")
    return line


def _frame_from_payload(payload: bytes, width: int, height: int) -> Frame420:
    ch, cw = chroma_dims(width, height)
    y_size = width * height
    c_size = ch * cw
    data = np.frombuffer(payload, dtype=np.uint8)
    return Frame420(
        y=data[:y_size].reshape(height, width),
        cb=data[y_size : y_size + c_size].reshape(ch, cw),
        cr=data[y_size + c_size : y_size + 2 * c_size].reshape(ch, cw),
    )


def write_clip(frames: Iterable[Frame420], header: ClipHeader, sink: BinaryIO) -> int:
    """Emit a Y4M stream; returns the byte count written.

    Round-trips exactly: parsing the output reproduces the input samples
    bit for bit.  An empty frame sequence produces a valid header-only stream.
    """
    head = (
        f"YUV4MPEG2 W{header.width} H{header.height} "
        f"F{header.fps_num}:{header.fps_den} C420mpeg2\n"
    ).encode("ascii")
    written = sink.write(head)
    for index, frame in enumerate(frames):
        if frame.width != header.width or frame.height != header.height:
            raise GeometryMismatch(
                f"frame {index} is {frame.width}x{frame.height}, "
                f"header says {header.width}x{header.height}"
            )
        written += sink.write(b"FRAME\n")
        written += sink.write(frame.y.tobytes())
        written += sink.write(frame.cb.tobytes())
        written += sink.write(frame.cr.tobytes())
    return written


def read_clip(path) -> tuple[ClipHeader, list[Frame420]]:
    """Read a whole Y4M file; the returned header has frame_count filled in."""
    with open(path, "rb") as stream:
        header = parse_y4m_header(stream)
        frames = []
        while True:
            frame = read_next_frame(stream, header)
            if frame is None:
                break
            frames.append(frame)
    header = ClipHeader(
        width=header.width,
        height=header.height,
        fps_num=header.fps_num,
        fps_den=header.fps_den,
        frame_count=len(frames),
    )
    return header, frames


def save_clip(path, frames: list[Frame420], fps: tuple[int, int] = (25, 1),
              header: Optional[ClipHeader] = None) -> int:
    """Write frames to a Y4M file; geometry is taken from the first frame
    unless an explicit header is given (required for empty clips)."""
    if header is None:
        if not frames:
            raise GeometryMismatch("empty clip needs an explicit header")
        header = ClipHeader(
            width=frames[0].width,
            height=frames[0].height,
            fps_num=fps[0],
            fps_den=fps[1],
            frame_count=len(frames),
        )
    with open(path, "wb") as sink:
        return write_clip(frames, header, sink)


def read_yuv_clip(path, width: int, height: int,
                  fps: tuple[int, int] = (25, 1)) -> tuple[ClipHeader, list[Frame420]]:
    """Read a headerless planar 4:2:0 file with caller-supplied geometry."""
    header = ClipHeader(width=width, height=height, fps_num=fps[0], fps_den=fps[1])
    per_frame = header.frame_payload_bytes
    with open(path, "rb") as stream:
        blob = stream.read()
    if len(blob) % per_frame != 0:
        raise TruncatedFrame(
            f"file size {len(blob)} is not a multiple of the "
            f"{per_frame}-byte frame payload for {width}x{height}"
        )
    frames = [
        _frame_from_payload(blob[i : i + per_frame], width, height)
        for i in range(0, len(blob), per_frame)
    ]
    return ClipHeader(width=width, height=height, fps_num=fps[0], fps_den=fps[1],
                      frame_count=len(frames)), frames


def write_yuv_clip(path, frames: list[Frame420]) -> int:
    """Write frames as headerless planar 4:2:0."""
    written = 0
    with open(path, "wb") as sink:
        for frame in frames:
            written += sink.write(frame.y.tobytes())
            written += sink.write(frame.cb.tobytes())
            written += sink.write(frame.cr.tobytes())
    return written
