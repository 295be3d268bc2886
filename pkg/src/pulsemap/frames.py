"""Timestamped grayscale frames, streams, and their on-disk formats.

Three sequence formats are supported:

``pgm-sequence``
    A directory of binary (P5) PGM files with zero-padded numeric names.
``png-sequence``
    A directory of grayscale PNG files with zero-padded numeric names.
``raw-planar``
    One file of concatenated row-major frames plus a JSON sidecar with the
    keys ``width``, ``height``, ``fps``, ``bit_depth`` and ``frame_count``.
    16-bit samples are little-endian.

Sequence directories may carry a ``stream.json`` file with the same keys,
which is how the frame rate survives a round trip.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

from pulsemap.errors import DimensionMismatchError, FrameFormatError, ParameterError

FORMATS = ("pgm-sequence", "png-sequence", "raw-planar")
FORMAT_ALIASES = {"pgm": "pgm-sequence", "png": "png-sequence", "raw": "raw-planar"}
STREAM_SIDECAR = "stream.json"
DEFAULT_FPS = 30.0
_NAME_DIGITS = 6
_NUMBER = re.compile(r"(\d+)")


@dataclass(frozen=True)
class Frame:
    """One grayscale image of a stream.

    ``data`` is a read-only ``(height, width)`` array.  Integer arrays hold
    native sensor counts; floating arrays hold processed intensities on the
    same 0-255 (or 0-65535) scale.
    """

    data: np.ndarray
    index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatchError(f"frame data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatchError(f"frame must be at least 1x1, got {data.shape}")
        if self.index < 0:
            raise ParameterError(f"frame index must be non-negative, got {self.index}")
        if data.flags.writeable or not data.flags.c_contiguous:
            # private copy so callers cannot mutate a frame after construction
            data = np.array(data, order="C")
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    fps: float = DEFAULT_FPS
    frame_count: Optional[int] = None
    bit_depth: int = 8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"invalid dimensions {self.width}x{self.height}")
        if not self.fps > 0:
            raise ParameterError(f"fps must be positive, got {self.fps}")
        if self.bit_depth not in (8, 16):
            raise ParameterError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        if self.frame_count is not None and self.frame_count < 0:
            raise ParameterError(f"frame_count must be non-negative, got {self.frame_count}")

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "bit_depth": self.bit_depth,
            "frame_count": self.frame_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamHeader":
        try:
            return cls(
                width=int(d["width"]),
                height=int(d["height"]),
                fps=float(d["fps"]),
                bit_depth=int(d.get("bit_depth", 8)),
                frame_count=None if d.get("frame_count") is None else int(d["frame_count"]),
            )
        except KeyError as exc:
            raise FrameFormatError(f"stream header is missing key {exc.args[0]!r}") from None


class FrameStream:
    """A header plus an iterable of frames.

    When ``frames`` is a re-iterable (a list, or a callable returning a fresh
    iterator) the stream can be consumed more than once; a plain generator
    gives a single-pass stream.  Frames are checked against the header as
    they are yielded.
    """

    def __init__(self, header: StreamHeader, frames, meta: Optional[dict] = None):
        self.header = header
        self._frames = frames
        self.meta = dict(meta or {})

    def __iter__(self) -> Iterator[Frame]:
        source = self._frames() if callable(self._frames) else self._frames
        expected = self.header.shape
        for frame in source:
            if frame.shape != expected:
                raise DimensionMismatchError(
                    f"frame {frame.index} has shape {frame.shape}, stream expects {expected}"
                )
            yield frame

    def __repr__(self):
        h = self.header
        return f"FrameStream({h.width}x{h.height} @ {h.fps} Hz, frames={h.frame_count})"


def stream_from_arrays(arrays: Iterable[np.ndarray], fps: float = DEFAULT_FPS,
                       bit_depth: int = 8) -> FrameStream:
    """Wrap a sequence of 2-D arrays as an in-memory stream."""
    arrays = [np.asarray(a) for a in arrays]
    if not arrays:
        raise ParameterError("cannot build a stream from zero frames")
    h, w = arrays[0].shape
    frames = [Frame(a, i, i / fps) for i, a in enumerate(arrays)]
    header = StreamHeader(w, h, fps, len(frames), bit_depth)
    return FrameStream(header, frames)


def to_float_intensity(frame: Frame, dtype=np.float32) -> Frame:
    """Promote a frame to floating intensity without rescaling (255 -> 255.0)."""
    if frame.data.dtype == dtype:
        return frame
    return Frame(frame.data.astype(dtype), frame.index, frame.timestamp)


def normalize_format(fmt: str) -> str:
    fmt = FORMAT_ALIASES.get(fmt, fmt)
    if fmt not in FORMATS:
        raise ParameterError(f"unknown frame format {fmt!r}; expected one of {', '.join(FORMATS)}")
    return fmt


def detect_format(path) -> str:
    path = Path(path)
    if path.is_file():
        return "raw-planar"
    if path.is_dir():
        names = os.listdir(path)
        if any(n.lower().endswith(".pgm") for n in names):
            return "pgm-sequence"
        if any(n.lower().endswith(".png") for n in names):
            return "png-sequence"
        raise FrameFormatError(f"no .pgm or .png frames in {path}")
    raise FileNotFoundError(f"input path does not exist: {path}")


# --------------------------------------------------------------------------- PGM

def _read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameFormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise FrameFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    nbytes = width * height * dtype.itemsize
    body = raw[pos:pos + nbytes]
    if len(body) < nbytes:
        raise FrameFormatError(f"{path}: truncated PGM body at byte offset {pos + len(body)}")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16) if dtype.itemsize == 2 else arr


def _write_pgm(path: Path, data: np.ndarray, bit_depth: int) -> None:
    h, w = data.shape
    maxval = 255 if bit_depth == 8 else 65535
    body = data.astype(np.uint8 if bit_depth == 8 else ">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(body)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.asarray(img, dtype=np.uint16)
        if img.mode != "L":
            raise FrameFormatError(f"{path}: expected a grayscale PNG, got mode {img.mode}")
        return np.asarray(img, dtype=np.uint8)


def _write_png(path: Path, data: np.ndarray, bit_depth: int) -> None:
    if bit_depth == 8:
        Image.fromarray(data.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(data.astype(np.uint16)).save(path)


# ------------------------------------------------------------------ read / write

def _numbered_files(path: Path, suffix: str) -> list:
    files = []
    for name in os.listdir(path):
        if not name.lower().endswith(suffix):
            continue
        digits = _NUMBER.findall(name)
        if not digits:
            continue
        files.append((int(digits[-1]), name))
    files.sort()
    return [path / name for _, name in files]


def _load_sidecar(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FrameFormatError(f"missing sidecar header {path}") from None
    except json.JSONDecodeError as exc:
        raise FrameFormatError(f"malformed sidecar header {path}: {exc}") from None


def raw_sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_frame_sequence(path, format: Optional[str] = None,
                        fps: Optional[float] = None) -> FrameStream:
    """Open a frame sequence for lazy, in-order reading.

    Parameters
    ----------
    path : path-like
        Sequence directory, or the ``.raw`` file for ``raw-planar``.
    format : str, optional
        One of :data:`FORMATS` (short aliases ``pgm``, ``png``, ``raw`` are
        accepted).  Detected from the path when omitted.
    fps : float, optional
        Frame rate for sequence directories without ``stream.json``.
        Defaults to 30 Hz.

    Raises
    ------
    FileNotFoundError
        `path` does not exist.
    FrameFormatError
        Missing raw sidecar, truncated final raw frame (the message names
        the byte offset where the partial frame starts), or an unreadable
        file.
    DimensionMismatchError
        Raised during iteration when a frame changes size mid-stream.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input path does not exist: {path}")
    fmt = normalize_format(format) if format else detect_format(path)
    if fmt == "raw-planar":
        return _open_raw(path)

    suffix = ".pgm" if fmt == "pgm-sequence" else ".png"
    reader = _read_pgm if fmt == "pgm-sequence" else _read_png
    if not path.is_dir():
        raise FrameFormatError(f"{fmt} input must be a directory: {path}")
    files = _numbered_files(path, suffix)
    if not files:
        raise FrameFormatError(f"no {suffix} frames in {path}")
    sidecar = path / STREAM_SIDECAR
    meta = _load_sidecar(sidecar) if sidecar.exists() else {}
    first = reader(files[0])
    rate = float(fps if fps is not None else meta.get("fps", DEFAULT_FPS))
    bit_depth = int(meta.get("bit_depth", 8 if first.dtype == np.uint8 else 16))
    header = StreamHeader(first.shape[1], first.shape[0], rate, len(files), bit_depth)

    def frames():
        for i, f in enumerate(files):
            arr = reader(f)
            if arr.shape != header.shape:
                raise DimensionMismatchError(
                    f"{f.name}: frame {i} has shape {arr.shape}, stream expects {header.shape}"
                )
            yield Frame(arr, i, i / rate)

    return FrameStream(header, frames)


def _open_raw(path: Path) -> FrameStream:
    header = StreamHeader.from_dict(_load_sidecar(raw_sidecar_path(path)))
    itemsize = 1 if header.bit_depth == 8 else 2
    frame_bytes = header.width * header.height * itemsize
    size = path.stat().st_size
    complete, partial = divmod(size, frame_bytes)
    if partial:
        raise FrameFormatError(
            f"{path}: truncated final frame at byte offset {complete * frame_bytes} "
            f"({partial} of {frame_bytes} bytes)"
        )
    if header.frame_count is not None and header.frame_count != complete:
        raise FrameFormatError(
            f"{path}: header declares {header.frame_count} frames, file holds {complete}"
        )
    header = StreamHeader(header.width, header.height, header.fps, complete, header.bit_depth)
    dtype = np.uint8 if itemsize == 1 else np.dtype("<u2")

    def frames():
        with open(path, "rb") as fh:
            for i in range(complete):
                buf = fh.read(frame_bytes)
                if len(buf) < frame_bytes:
                    raise FrameFormatError(
                        f"{path}: truncated final frame at byte offset {i * frame_bytes}"
                    )
                arr = np.frombuffer(buf, dtype=dtype).reshape(header.shape)
                yield Frame(arr.astype(np.uint16) if itemsize == 2 else arr, i, i / header.fps)

    return FrameStream(header, frames)


def quantize(data: np.ndarray, bit_depth: int, index: int = 0) -> np.ndarray:
    """Round to integer counts, refusing values that do not fit the bit depth."""
    maxval = (1 << bit_depth) - 1
    arr = np.asarray(data)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise ParameterError(f"frame {index}: non-finite intensity cannot be written")
        arr = np.rint(arr)
    lo, hi = arr.min(), arr.max()
    if lo < 0 or hi > maxval:
        raise ParameterError(
            f"frame {index}: intensity range [{lo}, {hi}] outside 0..{maxval} for {bit_depth}-bit output"
        )
    return arr.astype(np.uint8 if bit_depth == 8 else np.uint16)


def frame_filename(index: int, suffix: str, prefix: str = "frame_") -> str:
    return f"{prefix}{index:0{_NAME_DIGITS}d}{suffix}"


def write_frame_sequence(stream, path, format: str = "pgm-sequence",
                         bit_depth: Optional[int] = None) -> int:
    """Write every frame of `stream`; returns the number of frames written.

    Frames are rounded to integer counts.  Reading the result back reproduces
    integer-valued input bit-exactly.

    Raises
    ------
    OSError
        The destination cannot be created or written.
    ParameterError
        An intensity is non-finite or outside the representable range.
    """
    fmt = normalize_format(format)
    path = Path(path)
    header = stream.header
    depth = bit_depth or header.bit_depth
    count = 0
    if fmt == "raw-planar":
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            for frame in stream:
                arr = quantize(frame.data, depth, frame.index)
                fh.write(arr.astype(np.uint8 if depth == 8 else "<u2").tobytes())
                count += 1
        side = StreamHeader(header.width, header.height, header.fps, count, depth)
        _dump_json(raw_sidecar_path(path), side.to_dict())
        return count

    path.mkdir(parents=True, exist_ok=True)
    suffix = ".pgm" if fmt == "pgm-sequence" else ".png"
    writer = _write_pgm if fmt == "pgm-sequence" else _write_png
    for frame in stream:
        arr = quantize(frame.data, depth, frame.index)
        writer(path / frame_filename(frame.index, suffix), arr, depth)
        count += 1
    side = StreamHeader(header.width, header.height, header.fps, count, depth)
    _dump_json(path / STREAM_SIDECAR, side.to_dict())
    return count


def write_image(path, data: np.ndarray, bit_depth: int = 8) -> None:
    """Write a single grayscale image as PGM or PNG, chosen by suffix."""
    path = Path(path)
    arr = quantize(data, bit_depth)
    if path.suffix.lower() == ".png":
        _write_png(path, arr, bit_depth)
    else:
        _write_pgm(path, arr, bit_depth)


def read_image(path) -> np.ndarray:
    path = Path(path)
    return _read_png(path) if path.suffix.lower() == ".png" else _read_pgm(path)


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
