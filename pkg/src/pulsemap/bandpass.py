"""Butterworth bandpass design and per-pixel streaming IIR filtering.

A third-order analog Butterworth low-pass prototype is shifted to the band
with the low-pass-to-band-pass transform and digitized with the bilinear
transform, pre-warping both band edges so the digital filter keeps its
-3 dB points exactly where requested.  The result is an order-6 digital
filter, available both as one rational function (``b``, ``a``) and as a
cascade of three biquads (``sos``).

Two per-pixel realizations are provided.  :class:`DirectFormBank` runs the
order-6 recurrence literally; :class:`SosBank` runs the biquad cascade in
transposed direct form II and is the numerically safer default.  Both
accumulate in float64 and keep their state in the stage precision (float32
by default), except for the direct form's output history.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from pulsemap import _backend
from pulsemap.errors import DimensionMismatchError, NumericError, ParameterError
from pulsemap.frames import Frame, FrameStream, StreamHeader

DIRECT = "direct"
SOS = "sos"
REALIZATIONS = (SOS, DIRECT)


@dataclass(frozen=True)
class BandpassDesign:
    b: np.ndarray
    a: np.ndarray
    low_hz: float
    high_hz: float
    fs: float
    sos: np.ndarray
    zeros: np.ndarray
    poles: np.ndarray
    gain: float

    @property
    def order(self) -> int:
        return len(self.a) - 1

    @property
    def settling_frames(self) -> int:
        """Startup span flagged as unreliable: ``ceil(3 * fs / low_hz)`` frames."""
        return math.ceil(3.0 * self.fs / self.low_hz)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_coefficients_csv(self, buf)
        return buf.getvalue()


def _check_band(low_hz, high_hz, fs):
    if not fs > 0:
        raise ParameterError(f"sampling rate must be positive, got {fs}")
    if not 0 < low_hz:
        raise ParameterError(f"low edge must be positive, got {low_hz}")
    if not low_hz < high_hz:
        raise ParameterError(f"band edges out of order: low={low_hz} >= high={high_hz}")
    if not high_hz < fs / 2:
        raise ParameterError(f"high edge {high_hz} Hz is not below Nyquist {fs / 2} Hz")


def _pair_sections(zeros, poles, gain):
    """Group poles and zeros into biquads.

    Pole pairs are taken closest-to-the-unit-circle first and each grabs the
    two nearest remaining zeros.  The sections are then emitted in reverse,
    so the sharpest resonance runs last; the overall gain goes to the first
    section.
    """
    upper = [p for p in poles if p.imag > 0]
    reals = sorted((p for p in poles if p.imag == 0), key=lambda p: 1 - abs(p))
    if len(upper) * 2 + len(reals) != len(poles) or len(reals) % 2:
        raise ParameterError("cannot pair poles into second-order sections")
    groups = [(p, np.conj(p)) for p in upper]
    groups += [(reals[i], reals[i + 1]) for i in range(0, len(reals), 2)]
    groups.sort(key=lambda pp: 1 - abs(pp[0]))
    remaining = list(zeros)
    sections = []
    for pp in groups:
        chosen = []
        for _ in range(2):
            if not remaining:
                break
            j = int(np.argmin([abs(z - pp[0]) for z in remaining]))
            z = remaining.pop(j)
            if z.imag != 0:
                # a complex zero takes its conjugate along with it
                k = int(np.argmin([abs(zz - np.conj(z)) for zz in remaining]))
                chosen += [z, remaining.pop(k)]
                break
            chosen.append(z)
        num = np.real(np.poly(chosen)) if chosen else np.array([1.0])
        num = np.concatenate([num, np.zeros(3 - len(num))])
        den = np.real(np.poly(pp))
        sections.append(np.concatenate([num, den]))
    sos = np.array(sections[::-1], dtype=np.float64)
    sos[0, :3] *= gain
    return sos


def design_butterworth_bandpass(low_hz: float, high_hz: float, fs: float,
                                order: int = 3) -> BandpassDesign:
    """Third-order Butterworth bandpass, digitized to order 6.

    Raises
    ------
    ParameterError
        Band edges out of order, non-positive, at or above Nyquist, or an
        order other than 3.
    """
    if order != 3:
        raise ParameterError(f"only the third-order prototype is supported, got order={order}")
    _check_band(low_hz, high_hz, fs)

    n = order
    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))

    fs2 = 2.0 * fs
    wl = fs2 * math.tan(math.pi * low_hz / fs)
    wh = fs2 * math.tan(math.pi * high_hz / fs)
    w0 = math.sqrt(wl * wh)
    bw = wh - wl

    half = proto * bw / 2
    root = np.sqrt(half ** 2 - w0 ** 2)
    p_analog = np.concatenate([half + root, half - root])
    z_analog = np.zeros(n)
    k_analog = bw ** n

    p_digital = (fs2 + p_analog) / (fs2 - p_analog)
    z_digital = np.concatenate([(fs2 + z_analog) / (fs2 - z_analog), -np.ones(n)])
    gain = float(k_analog * np.real(np.prod(fs2 - z_analog) / np.prod(fs2 - p_analog)))

    b = gain * np.real(np.poly(z_digital))
    a = np.real(np.poly(p_digital))
    sos = _pair_sections(z_digital.astype(complex), p_digital, gain)
    return BandpassDesign(b, a, float(low_hz), float(high_hz), float(fs), sos,
                          z_digital.astype(complex), p_digital, gain)


def _bandpass_numerator_zeros(b):
    """Exact zeros for the (1 - z^-2)^3 numerator every such design has."""
    ref = np.array([1.0, 0.0, -3.0, 0.0, 3.0, 0.0, -1.0])
    if len(b) == 7 and b[0] != 0 and np.allclose(b / b[0], ref, rtol=0, atol=1e-9):
        return np.array([1, 1, 1, -1, -1, -1], dtype=complex)
    return np.roots(b).astype(complex)


def design_from_coefficients(b, a, fs: float, low_hz: float, high_hz: float) -> BandpassDesign:
    """Wrap externally supplied ``b``/``a`` coefficients (``a[0]`` need not be 1)."""
    b = np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if len(b) != len(a) or len(a) < 2 or a[0] == 0:
        raise ParameterError("coefficient vectors must have equal length and a[0] != 0")
    _check_band(low_hz, high_hz, fs)
    zeros = _bandpass_numerator_zeros(b)
    poles = np.roots(a).astype(complex)
    gain = float(b[0] / a[0])
    sos = _pair_sections(zeros, poles, gain)
    return BandpassDesign(b, a, float(low_hz), float(high_hz), float(fs), sos, zeros, poles, gain)


def frequency_response(design: BandpassDesign, freqs):
    """Magnitude and phase of ``B(z)/A(z)`` at ``z = exp(j 2 pi f / fs)``.

    The rational function is evaluated in factored form,
    ``gain * prod(1 - z_i/z) / prod(1 - p_i/z)``, which is the same function
    as the expanded coefficients but keeps the band-edge zeros exact.

    Returns
    -------
    magnitude, phase : ndarray
        Phase in radians.
    """
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    if np.any(f < 0) or np.any(f > design.fs / 2):
        raise ParameterError(f"frequencies must lie in [0, {design.fs / 2}] Hz")
    zinv = np.exp(-2j * np.pi * f / design.fs)
    zinv[f == design.fs / 2] = -1.0  # exp() leaves a 1e-16 imaginary residue at Nyquist
    num = np.prod(1.0 - np.outer(zinv, design.zeros), axis=1)
    den = np.prod(1.0 - np.outer(zinv, design.poles), axis=1)
    h = design.gain * num / den
    return np.abs(h), np.angle(h)


def sos_frequency_response(sos: np.ndarray, freqs, fs: float) -> np.ndarray:
    """Complex response of a biquad cascade (used to cross-check the two forms)."""
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    zinv = np.exp(-2j * np.pi * f / fs)
    h = np.ones_like(zinv)
    for sec in sos:
        h *= np.polyval(sec[2::-1], zinv) / np.polyval(sec[:2:-1], zinv)
    return h


def sos_to_tf(sos: np.ndarray):
    b, a = np.array([1.0]), np.array([1.0])
    for sec in sos:
        b = np.convolve(b, sec[:3])
        a = np.convolve(a, sec[3:])
    return b, a


# ------------------------------------------------------------------ CSV interchange

def write_coefficients_csv(design: BandpassDesign, fh) -> None:
    """Write ``i,b_i,a_i`` rows using shortest round-trip decimal formatting."""
    fh.write(f"# fs={design.fs!r}\n# low_hz={design.low_hz!r}\n# high_hz={design.high_hz!r}\n")
    fh.write("i,b,a\n")
    for i, (bi, ai) in enumerate(zip(design.b.tolist(), design.a.tolist())):
        fh.write(f"{i},{bi!r},{ai!r}\n")


def read_coefficients_csv(fh, fs: Optional[float] = None, low_hz: Optional[float] = None,
                          high_hz: Optional[float] = None) -> BandpassDesign:
    meta = {}
    b, a = [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = float(value)
            continue
        if line.startswith("i,"):
            continue
        cols = line.split(",")
        if len(cols) != 3:
            raise ParameterError(f"bad coefficient row {line!r}")
        if int(cols[0]) != len(b):
            raise ParameterError(f"coefficient rows out of order at {line!r}")
        b.append(float(cols[1]))
        a.append(float(cols[2]))
    try:
        fs = fs if fs is not None else meta["fs"]
        low_hz = low_hz if low_hz is not None else meta["low_hz"]
        high_hz = high_hz if high_hz is not None else meta["high_hz"]
    except KeyError as exc:
        raise ParameterError(f"coefficient file lacks {exc.args[0]} and none was given") from None
    return design_from_coefficients(b, a, fs, low_hz, high_hz)


# ------------------------------------------------------------------ per-pixel banks

class PixelFilterBank:
    """Per-pixel IIR state for one frame geometry.

    Subclasses implement :meth:`_kernel`.  ``step`` returns a fresh output
    array and raises :class:`NumericError` naming the pixel and frame when
    a non-finite value appears.
    """

    realization = None
    state_width = 0

    def __init__(self, design: BandpassDesign, shape, dtype=np.float32,
                 backend=None, threads: Optional[int] = None):
        self.design = design
        self.shape = tuple(shape)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ParameterError(f"dtype must be float32 or float64, got {self.dtype}")
        self.backend = _backend.get(backend)
        self.threads = threads or _backend.default_threads()
        self.state = np.zeros(self.shape + (self.state_width,), dtype=self.dtype)
        self.n = 0

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def height(self) -> int:
        return self.shape[0]

    def reset(self):
        self.state[...] = 0
        self.n = 0

    def step(self, data: np.ndarray, frame_index: Optional[int] = None) -> np.ndarray:
        if data.shape != self.shape:
            raise DimensionMismatchError(
                f"input of shape {data.shape} does not match filter bank {self.shape}"
            )
        x = np.ascontiguousarray(data, dtype=self.dtype)
        out = np.empty(self.shape, dtype=self.dtype)
        bad = self._kernel(x, out)
        idx = self.n if frame_index is None else frame_index
        self.n += 1
        if bad >= 0:
            row, col = divmod(bad, self.width)
            raise NumericError(
                f"non-finite filter output at pixel (x={col}, y={row}) in frame {idx}",
                frame_index=idx, pixel=(col, row),
            )
        return out

    def _kernel(self, x, out):
        raise NotImplementedError


class DirectFormBank(PixelFilterBank):
    """Order-6 direct form I: six past inputs and six past outputs per pixel.

    Past outputs are always kept in float64.  The order-6 feedback path
    amplifies rounding of stored outputs by orders of magnitude, and float32
    output history alone puts this realization ~1e-4 away from the cascade.
    """

    realization = DIRECT

    def __init__(self, design, shape, dtype=np.float32, backend=None, threads=None):
        self.state_width = design.order
        super().__init__(design, shape, dtype, backend, threads)
        self.out_state = np.zeros(self.shape + (design.order,), dtype=np.float64)
        a0 = design.a[0]
        self.nb = np.ascontiguousarray(design.b / a0)
        self.na = np.ascontiguousarray(design.a / a0)

    def reset(self):
        super().reset()
        self.out_state[...] = 0

    def _kernel(self, x, out):
        return self.backend.df1_step(x, self.state, self.out_state, self.nb, self.na,
                                     out, self.threads)


class SosBank(PixelFilterBank):
    """Biquad cascade in transposed direct form II: two states per section."""

    realization = SOS

    def __init__(self, design, shape, dtype=np.float32, backend=None, threads=None):
        self.state_width = 2 * design.sos.shape[0]
        super().__init__(design, shape, dtype, backend, threads)
        sos = np.array(design.sos, dtype=np.float64)
        sos[:, :3] /= sos[:, 3:4]
        sos[:, 3:] /= sos[:, 3:4]
        self.sos = np.ascontiguousarray(sos)

    def _kernel(self, x, out):
        return self.backend.sos_step(x, self.state, self.sos, out, self.threads)


def make_bank(design: BandpassDesign, shape, realization: str = SOS, dtype=np.float32,
              backend=None, threads: Optional[int] = None) -> PixelFilterBank:
    if realization == SOS:
        return SosBank(design, shape, dtype, backend, threads)
    if realization == DIRECT:
        return DirectFormBank(design, shape, dtype, backend, threads)
    raise ParameterError(f"unknown realization {realization!r}; expected sos or direct")


def _apply(stream: FrameStream, bank: PixelFilterBank) -> FrameStream:
    h = stream.header
    if bank.shape != h.shape:
        raise DimensionMismatchError(f"bank shape {bank.shape} does not match stream {h.shape}")
    if not bank.design.is_stable():
        raise ParameterError("bandpass design is unstable (pole on or outside the unit circle)")

    def frames() -> Iterator[Frame]:
        for frame in stream:
            yield Frame(bank.step(frame.data, frame.index), frame.index, frame.timestamp)

    return FrameStream(StreamHeader(h.width, h.height, h.fps, h.frame_count, h.bit_depth),
                       frames, meta=dict(stream.meta))


def apply_bandpass_stream(stream: FrameStream, design: BandpassDesign,
                          bank: Optional[PixelFilterBank] = None, dtype=np.float32,
                          backend=None, threads: Optional[int] = None) -> FrameStream:
    """Filter every pixel with the order-6 direct-form recurrence.

    Output frame ``n`` carries the same index as input frame ``n``.  A
    supplied `bank` keeps its state; pass a fresh or reset one for a new
    stream.
    """
    if bank is None:
        bank = DirectFormBank(design, stream.header.shape, dtype, backend, threads)
    elif bank.realization != DIRECT:
        raise ParameterError("apply_bandpass_stream needs a DirectFormBank")
    return _apply(stream, bank)


def apply_bandpass_sos_stream(stream: FrameStream, design: BandpassDesign,
                              bank: Optional[PixelFilterBank] = None, dtype=np.float32,
                              backend=None, threads: Optional[int] = None) -> FrameStream:
    """As :func:`apply_bandpass_stream`, through the biquad cascade."""
    if bank is None:
        bank = SosBank(design, stream.header.shape, dtype, backend, threads)
    elif bank.realization != SOS:
        raise ParameterError("apply_bandpass_sos_stream needs a SosBank")
    return _apply(stream, bank)
