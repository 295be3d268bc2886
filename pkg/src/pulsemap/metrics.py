"""Quantitative instruments: localization, latency, and tone-gain checks."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from pulsemap.bandpass import BandpassDesign, make_bank, SOS
from pulsemap.errors import DimensionMismatchError, ParameterError
from pulsemap.frames import Frame, FrameStream
from pulsemap.pipeline import PipelineConfig, PulsationExtractor, check_rate
from pulsemap.temporal import TemporalKernel, TemporalWindow

TOP_FRACTION = 0.10
TOP_FLOOR = 1.0


# --------------------------------------------------------------------------- localization

@dataclass(frozen=True)
class EnergyConcentration:
    """Mean map intensity inside the pulsation mask against the rest.

    ``out_region_mean`` excludes both the pulsation and drift masks; the
    drift region is reported on its own.  When nothing at all lights up
    outside, ``ratio`` is ``None`` and ``saturated`` is set.
    """

    in_region_mean: float
    out_region_mean: float
    drift_region_mean: float
    ratio: Optional[float]
    frames_evaluated: int
    saturated: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _masks(gt, n: int, shape):
    pm = np.asarray(gt.pulsation_mask(n), dtype=bool)
    dm = np.asarray(gt.drift_mask(n), dtype=bool)
    if pm.shape != shape or dm.shape != shape:
        raise DimensionMismatchError(
            f"map shape {shape} does not match mask shapes {pm.shape}, {dm.shape}"
        )
    return pm, dm & ~pm


def energy_concentration(maps: Iterable, gt, skip_settling: bool = True) -> EnergyConcentration:
    """Pool every (steady-state) map into one energy-concentration report.

    Means are pixel-weighted over all evaluated frames.  `gt` needs
    ``pulsation_mask(n)`` and ``drift_mask(n)`` methods returning boolean
    arrays for source frame ``n``.

    Raises
    ------
    ParameterError
        The pulsation mask is empty or no frame was evaluated.
    """
    s_in = s_out = s_dr = 0.0
    c_in = c_out = c_dr = 0
    frames = 0
    for pm in maps:
        if skip_settling and getattr(pm, "settling", False):
            continue
        data = np.asarray(getattr(pm, "data", pm), dtype=np.float64)
        n = getattr(pm, "source_frame_index", frames)
        inside, drift = _masks(gt, n, data.shape)
        if not inside.any():
            raise ParameterError(f"pulsation mask for frame {n} is empty")
        out = ~(inside | drift)
        s_in += data[inside].sum()
        c_in += int(inside.sum())
        s_out += data[out].sum()
        c_out += int(out.sum())
        s_dr += data[drift].sum()
        c_dr += int(drift.sum())
        frames += 1
    if frames == 0:
        raise ParameterError("no steady-state maps to evaluate")
    m_in = float(s_in / c_in)
    m_out = float(s_out / c_out) if c_out else 0.0
    m_dr = float(s_dr / c_dr) if c_dr else 0.0
    saturated = not m_out > 0
    ratio = None if saturated else m_in / m_out
    return EnergyConcentration(m_in, m_out, m_dr, ratio, frames, saturated)


def drift_region_mean(maps: Iterable, gt, skip_settling: bool = True) -> float:
    """Pixel-weighted mean map intensity over the drift mask alone.

    Unlike :func:`energy_concentration` this works on scenes without any
    pulsating structure.
    """
    total = 0.0
    count = 0
    for pm in maps:
        if skip_settling and getattr(pm, "settling", False):
            continue
        data = np.asarray(getattr(pm, "data", pm), dtype=np.float64)
        _, drift = _masks(gt, pm.source_frame_index, data.shape)
        total += data[drift].sum()
        count += int(drift.sum())
    if count == 0:
        raise ParameterError("no drift-mask pixels in any steady-state map")
    return float(total / count)


def top_fraction_mask(data: np.ndarray, fraction: float = TOP_FRACTION,
                      floor: float = TOP_FLOOR) -> np.ndarray:
    """Pixels among the brightest ``ceil(fraction * N)``; ties at the cut are kept.

    Pixels below `floor` never count, so a dark map selects nothing instead
    of an arbitrary tenth of its zeros.
    """
    flat = np.asarray(data).ravel()
    k = max(1, math.ceil(fraction * flat.size))
    cut = np.partition(flat, flat.size - k)[flat.size - k]
    return np.asarray(data) >= max(cut, floor)


def top_decile_coverage(data: np.ndarray, masks: Sequence[np.ndarray]) -> List[float]:
    """Fraction of each mask covered by the map's top-decile pixels."""
    top = top_fraction_mask(data)
    return [float((top & m).sum()) / float(m.sum()) for m in masks]


def detection_rate(maps: Iterable, gt, min_cover: float = 0.05,
                   skip_settling: bool = True) -> tuple:
    """Share of steady-state frames in which every ring is covered by at least `min_cover`.

    Returns ``(rate, coverages)`` with ``coverages`` of shape ``(frames, rings)``.
    """
    rows = []
    for pm in maps:
        if skip_settling and pm.settling:
            continue
        rows.append(top_decile_coverage(pm.data, gt.ring_masks(pm.source_frame_index)))
    if not rows:
        raise ParameterError("no steady-state maps to evaluate")
    cov = np.array(rows)
    return float(np.mean(np.all(cov >= min_cover, axis=1))), cov


# --------------------------------------------------------------------------- latency

@dataclass(frozen=True)
class LatencyStats:
    durations: tuple
    width: int
    height: int
    groups: int = 1
    min: float = field(init=False)
    max: float = field(init=False)
    mean: float = field(init=False)
    median: float = field(init=False)
    p95: float = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=np.float64)
        if d.size == 0:
            raise ParameterError("latency statistics need at least one duration")
        object.__setattr__(self, "durations", tuple(float(x) for x in d))
        object.__setattr__(self, "min", float(d.min()))
        object.__setattr__(self, "max", float(d.max()))
        object.__setattr__(self, "mean", float(d.mean()))
        object.__setattr__(self, "median", float(np.median(d)))
        object.__setattr__(self, "p95", float(np.percentile(d, 95)))

    @property
    def frames(self) -> int:
        return len(self.durations)

    @property
    def fps(self) -> float:
        return 1.0 / self.mean

    def summary(self) -> dict:
        return {"frames": self.frames, "groups": self.groups, "width": self.width,
                "height": self.height, "min_s": self.min, "max_s": self.max,
                "mean_s": self.mean, "median_s": self.median, "p95_s": self.p95,
                "mean_fps": self.fps}

    def write_csv(self, fh) -> None:
        """One duration in seconds per line, written with full precision."""
        for d in self.durations:
            fh.write(f"{d!r}\n")

    @classmethod
    def read_csv(cls, fh, width: int, height: int, groups: int = 1) -> "LatencyStats":
        vals = [float(line) for line in fh if line.strip()]
        return cls(tuple(vals), width, height, groups)


def measure_latency(stream: FrameStream, config: Optional[PipelineConfig] = None,
                    groups: int = 9, frames_per_group: int = 500, dtype=np.float32,
                    backend=None, threads: Optional[int] = None) -> LatencyStats:
    """Per-frame wall-clock time of the full chain, in `groups` independent runs.

    Each group starts from a fresh pipeline.  Its first ``2r`` frames only
    fill the temporal window and are not timed, so every timed frame
    produces a map.  Frames of a group are loaded into memory before timing
    starts; reading them is never timed.

    Raises
    ------
    ParameterError
        The stream holds fewer than ``groups * (frames_per_group + 2r)`` frames.
    """
    config = config or PipelineConfig()
    if groups < 1 or frames_per_group < 1:
        raise ParameterError("groups and frames_per_group must be positive")
    check_rate(stream, config)
    h = stream.header
    ex = PulsationExtractor(config, h.shape, dtype, backend, threads)
    lead = ex.warmup_frames
    need = groups * (frames_per_group + lead)
    source = iter(stream)
    durations = []
    for g in range(groups):
        batch = []
        for _ in range(frames_per_group + lead):
            f = next(source, None)
            if f is None:
                raise ParameterError(
                    f"latency run needs {need} frames ({groups} groups of "
                    f"{frames_per_group} plus {lead} warm-up each); stream ran out"
                )
            batch.append(f)
        ex.reset()
        for f in batch[:lead]:
            ex.push(f)
        for f in batch[lead:]:
            t0 = time.perf_counter()
            ex.push(f)
            durations.append(time.perf_counter() - t0)
    return LatencyStats(tuple(durations), h.width, h.height, groups)


def synthetic_stream(width: int, height: int, frames: Optional[int] = None, fps: float = 30.0,
                     bank_size: int = 60, seed: int = 0) -> FrameStream:
    """8-bit noise frames cycling through a small pre-generated bank.

    Cheap to produce at any length, which is what benchmarking needs.
    """
    from pulsemap.frames import StreamHeader

    rng = np.random.Generator(np.random.PCG64(seed))
    bank = [rng.integers(0, 256, size=(height, width), dtype=np.uint8) for _ in range(bank_size)]
    for b in bank:
        b.flags.writeable = False

    def gen():
        n = 0
        while frames is None or n < frames:
            yield Frame(bank[n % bank_size], n, n / fps)
            n += 1

    return FrameStream(StreamHeader(width, height, fps, frames, 8), gen)


# --------------------------------------------------------------------------- tone gain

def _stage_runner(stage, realization: str, dtype, backend) -> Callable:
    if isinstance(stage, TemporalKernel):
        def run(x):
            win = TemporalWindow(stage, (1, 1), dtype, backend, 1)
            out = []
            for i, v in enumerate(x):
                f = win.push(Frame(np.full((1, 1), v, dtype=dtype), i))
                if f is not None:
                    out.append(f.data[0, 0])
            return np.array(out, dtype=np.float64)
        return run
    if isinstance(stage, BandpassDesign):
        def run(x):
            bank = make_bank(stage, (1, 1), realization, dtype, backend, 1)
            return np.array([bank.step(np.full((1, 1), v, dtype=dtype), i)[0, 0]
                             for i, v in enumerate(x)], dtype=np.float64)
        return run
    if callable(stage):
        return lambda x: np.asarray(stage(x), dtype=np.float64)
    raise ParameterError(f"cannot measure the tone gain of {type(stage).__name__}")


def measure_tone_gain(stage, freq: float, fs: float, settle_frames: int, periods: int = 20,
                      n_frames: Optional[int] = None, realization: str = SOS,
                      dtype=np.float64, backend=None) -> float:
    """Steady-state output amplitude for a unit sinusoid at `freq`.

    `stage` is a :class:`TemporalKernel`, a :class:`BandpassDesign`, or a
    callable mapping a 1-D input signal to its output.  The signal is fed
    through a single pixel; the first `settle_frames` outputs are dropped
    and the amplitude is the least-squares fit of ``a sin + b cos`` over an
    integer number of periods.  At 0 Hz the input is the constant 1 and the
    largest steady-state output magnitude is returned.

    Raises
    ------
    ParameterError
        `freq` is not in ``[0, fs/2)``, or `n_frames` leaves nothing after
        settling.
    """
    if not 0 <= freq < fs / 2:
        raise ParameterError(f"tone frequency {freq} Hz must lie in [0, {fs / 2}) Hz")
    if freq == 0:
        span = max(1, periods)
    else:
        span = max(1, int(round(periods * fs / freq)))
    total = n_frames if n_frames is not None else settle_frames + span + 2 * 64
    if settle_frames < 0 or settle_frames >= total:
        raise ParameterError(
            f"settling of {settle_frames} frames leaves no output among {total} frames"
        )
    n = np.arange(total, dtype=np.float64)
    x = np.ones(total) if freq == 0 else np.sin(2 * np.pi * freq * n / fs)
    y = _stage_runner(stage, realization, dtype, backend)(x)
    y = y[settle_frames:]
    if y.size == 0:
        raise ParameterError(f"stage produced no output after {settle_frames} settling frames")
    if freq == 0:
        return float(np.max(np.abs(y)))
    m = (y.size // span) * span if y.size >= span else y.size
    if m < 2:
        raise ParameterError("too few steady-state outputs to fit an amplitude")
    # output samples keep their own time base; only the amplitude is fitted
    t = np.arange(m, dtype=np.float64)
    w = 2 * np.pi * freq / fs
    A = np.column_stack([np.sin(w * t), np.cos(w * t)])
    coef, *_ = np.linalg.lstsq(A, y[-m:], rcond=None)
    return float(math.hypot(*coef))
