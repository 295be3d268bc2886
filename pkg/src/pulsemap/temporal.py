"""Temporal kernels along the frame axis.

The acceleration extractor is a difference of two sampled Gaussians,
``G(sigma/2, t) - G(2 sigma, t)``, which behaves like a scaled second
derivative of a Gaussian and annihilates signals that are affine in time.
The linear baseline is the first derivative of a Gaussian of the same
``sigma``.

Convolution is valid-mode and centered: an output is produced once ``2r+1``
frames are buffered and is stamped with the index of the window's center
frame, so every output lags the newest input by ``r`` frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from pulsemap import _backend
from pulsemap.errors import DimensionMismatchError, ParameterError
from pulsemap.frames import Frame, FrameStream, StreamHeader

DOG = "dog"
DERIV1 = "gaussian-derivative-1"
KINDS = (DOG, DERIV1)
KIND_ALIASES = {"deriv1": DERIV1, "linear": DERIV1, "acc": DOG}


def normalize_kind(kind: str) -> str:
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ParameterError(f"unknown kernel kind {kind!r}; expected dog or deriv1")
    return kind


def compute_sigma(fd: float, fs: float) -> float:
    """Temporal scale in frames for motion frequency `fd` sampled at `fs`.

    ``sigma = fs / (4 * fd * sqrt(2))``; with this choice the kernel's
    frequency response peaks close to `fd`.
    """
    if not fd > 0 or not fs > 0:
        raise ParameterError(f"fd and fs must be positive, got fd={fd}, fs={fs}")
    if fd >= fs / 2:
        raise ParameterError(f"fd={fd} Hz is not below the Nyquist frequency {fs / 2} Hz")
    return fs / (4.0 * fd * math.sqrt(2.0))


def kernel_radius(sigma: float) -> int:
    """Half-width covering three standard deviations of the wider Gaussian."""
    return max(1, math.ceil(3.0 * (2.0 * sigma)))


def _unit_gaussian(offsets: np.ndarray, s: float) -> np.ndarray:
    g = np.exp(-0.5 * (offsets / s) ** 2)
    return g / g.sum()


@dataclass(frozen=True)
class TemporalKernel:
    taps: np.ndarray
    radius: int
    sigma: float
    kind: str
    fd: Optional[float] = None
    fs: Optional[float] = None
    scale: float = 1.0
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 1 or len(taps) != 2 * self.radius + 1:
            raise ParameterError(f"kernel needs {2 * self.radius + 1} taps, got {taps.shape}")
        if self.radius < 1:
            raise ParameterError("kernel radius must be at least 1")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)
        w = taps[self.radius + 1:].copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def length(self) -> int:
        return len(self.taps)

    @property
    def symmetric(self) -> bool:
        return self.kind == DOG

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1)

    def response(self, freq_hz, fs: Optional[float] = None) -> np.ndarray:
        """Complex DTFT of the taps at `freq_hz` (``fs`` defaults to the kernel's)."""
        fs = fs or self.fs
        if fs is None:
            raise ParameterError("sampling rate unknown; pass fs")
        w = 2 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=np.float64)) / fs
        return np.exp(-1j * np.outer(w, self.offsets)) @ self.taps

    def scaled(self, factor: float) -> "TemporalKernel":
        return TemporalKernel(self.taps * factor, self.radius, self.sigma, self.kind,
                              self.fd, self.fs, self.scale * factor)

    def to_csv(self) -> str:
        lines = ["offset,weight"]
        lines += [f"{o},{w!r}" for o, w in zip(self.offsets.tolist(), self.taps.tolist())]
        return "\n".join(lines) + "\n"


def build_dog_kernel(sigma: float, fd: Optional[float] = None,
                     fs: Optional[float] = None) -> TemporalKernel:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = kernel_radius(sigma)
    t = np.arange(0, r + 1, dtype=np.float64)
    t = np.concatenate([-t[:0:-1], t])
    # each Gaussian is normalized on the truncated grid so DC cancels exactly
    taps = _unit_gaussian(t, sigma / 2.0) - _unit_gaussian(t, 2.0 * sigma)
    half = taps[r:]
    taps = np.concatenate([half[:0:-1], half])
    return TemporalKernel(taps, r, sigma, DOG, fd, fs)


def build_derivative1_kernel(sigma: float, fd: Optional[float] = None,
                             fs: Optional[float] = None) -> TemporalKernel:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = kernel_radius(sigma)
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = _unit_gaussian(t, sigma)
    half = (-t * g / sigma ** 2)[r:]
    taps = np.concatenate([-half[:0:-1], half])
    return TemporalKernel(taps, r, sigma, DERIV1, fd, fs)


def build_kernel(kind: str, fd: float, fs: float, match_gain: bool = True) -> TemporalKernel:
    """Kernel of `kind` for motion frequency `fd`.

    With `match_gain`, the first-derivative kernel is rescaled so that its
    magnitude at `fd` equals the DoG kernel's; the two extractors then pass
    the pulsation band identically and differ only in what they let through
    elsewhere.
    """
    kind = normalize_kind(kind)
    sigma = compute_sigma(fd, fs)
    dog = build_dog_kernel(sigma, fd, fs)
    if kind == DOG:
        return dog
    d1 = build_derivative1_kernel(sigma, fd, fs)
    if not match_gain:
        return d1
    return d1.scaled(abs(dog.response(fd)[0]) / abs(d1.response(fd)[0]))


_COUNT_TYPES = (np.dtype(np.uint8), np.dtype(np.uint16))


class TemporalWindow:
    """Ring buffer of the newest ``2r+1`` frames feeding the temporal kernel.

    Parameters
    ----------
    kernel : TemporalKernel
    shape : tuple of int
        ``(height, width)`` of the frames.
    dtype : numpy dtype
        Output precision; float32 for production, float64 for the
        reference path.

    Notes
    -----
    While frames arrive as 8- or 16-bit counts the ring keeps them in that
    type, which cuts the memory traffic of each step.  Counts convert to
    float exactly, so the output does not depend on the storage type.  A
    floating frame switches the ring to `dtype` for good.
    """

    def __init__(self, kernel: TemporalKernel, shape, dtype=np.float32,
                 backend=None, threads: Optional[int] = None):
        self.kernel = kernel
        self.shape = tuple(shape)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ParameterError(f"dtype must be float32 or float64, got {self.dtype}")
        self.backend = _backend.get(backend)
        self.threads = threads or _backend.default_threads()
        L = kernel.length
        self._ring = np.zeros((L,) + self.shape, dtype=self.dtype)
        self._index = np.zeros(L, dtype=np.int64)
        self._stamp = np.zeros(L, dtype=np.float64)
        self.count = 0

    @property
    def radius(self) -> int:
        return self.kernel.radius

    @property
    def full(self) -> bool:
        return self.count >= self.kernel.length

    def reset(self):
        self._ring[...] = 0
        self.count = 0

    def push(self, frame: Frame) -> Optional[Frame]:
        """Insert `frame`; return the filtered center frame once the window is full."""
        if frame.shape != self.shape:
            raise DimensionMismatchError(
                f"frame {frame.index} has shape {frame.shape}, window expects {self.shape}"
            )
        L = self.kernel.length
        slot = self.count % L
        data = frame.data
        if self.count == 0 and self._ring.dtype != data.dtype and data.dtype in _COUNT_TYPES:
            self._ring = np.zeros(self._ring.shape, dtype=data.dtype)
        elif self._ring.dtype != data.dtype and self._ring.dtype != self.dtype:
            self._ring = self._ring.astype(self.dtype)
        self._ring[slot] = data
        self._index[slot] = frame.index
        self._stamp[slot] = frame.timestamp
        self.count += 1
        if self.count < L:
            return None
        order = (np.arange(L, dtype=np.int64) + self.count) % L
        out = np.empty(self.shape, dtype=self.dtype)
        self.backend.temporal_paired(self._ring, order, self.kernel.weights,
                                     self.kernel.symmetric, out, self.threads)
        c = order[self.radius]
        return Frame(out, int(self._index[c]), float(self._stamp[c]))


def stream_temporal_filter(stream: FrameStream, kernel: TemporalKernel, dtype=np.float32,
                           backend=None, threads: Optional[int] = None) -> FrameStream:
    """Filter `stream` along time; yields ``N - 2r`` frames for ``N`` inputs.

    The output stream's ``meta["group_delay_frames"]`` is the kernel radius.
    Streams shorter than the kernel produce no output.
    """
    h = stream.header
    window = TemporalWindow(kernel, h.shape, dtype, backend, threads)

    def frames() -> Iterator[Frame]:
        window.reset()
        for frame in stream:
            out = window.push(frame)
            if out is not None:
                yield out

    count = None if h.frame_count is None else max(0, h.frame_count - 2 * kernel.radius)
    header = StreamHeader(h.width, h.height, h.fps, count, h.bit_depth)
    return FrameStream(header, frames, meta={"group_delay_frames": kernel.radius,
                                             "kernel": kernel.kind})


def convolve_valid(data: np.ndarray, kernel: TemporalKernel, dtype=None) -> np.ndarray:
    """Offline valid-mode convolution of a whole ``(T, ...)`` array along axis 0.

    Uses the same paired-difference arithmetic as the streaming path, so
    results match it bit-for-bit; returns ``T - 2r`` frames.
    """
    x = np.asarray(data)
    if dtype is not None:
        x = x.astype(dtype)
    elif x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    r = kernel.radius
    T = x.shape[0]
    if T < kernel.length:
        return np.zeros((0,) + x.shape[1:], dtype=x.dtype)
    center = x[r:T - r]
    acc = np.zeros(center.shape, dtype=np.float64)
    for k in range(1, r + 1):
        before = x[r - k:T - r - k]
        after = x[r + k:T - r + k]
        if kernel.symmetric:
            d = (before - center) + (after - center)
        else:
            d = before - after
        acc += kernel.weights[k - 1] * d.astype(np.float64, copy=False)
    return acc.astype(x.dtype)
