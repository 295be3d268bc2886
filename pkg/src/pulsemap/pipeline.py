"""Configuration and the streaming temporal -> bandpass -> normalize chain."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from pulsemap import _backend
from pulsemap.bandpass import REALIZATIONS, SOS, design_butterworth_bandpass, make_bank
from pulsemap.errors import ParameterError
from pulsemap.frames import Frame, FrameStream
from pulsemap.render import PRESETS, NormalizationParams, PulsationMap, normalize_array
from pulsemap.temporal import DOG, TemporalWindow, build_kernel, compute_sigma, normalize_kind

CUSTOM = "custom"


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the extraction chain.

    ``alpha``/``gamma`` left as ``None`` are filled from ``preset``; giving
    them explicitly turns the preset into ``"custom"`` unless they equal the
    preset's values.  ``match_linear_gain`` rescales the first-derivative
    kernel to the DoG kernel's gain at ``fd_hz``.
    """

    fd_hz: float = 1.5
    fs_hz: float = 30.0
    band_lo_hz: float = 0.9
    band_hi_hz: float = 2.0
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    kernel_kind: str = DOG
    realization: str = SOS
    preset: str = "carotid"
    emit_heatmap: bool = False
    lut_path: Optional[str] = None
    match_linear_gain: bool = True

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("kernel_kind", normalize_kind(self.kernel_kind))
        if self.realization not in REALIZATIONS:
            raise ParameterError(f"realization must be sos or direct, got {self.realization!r}")
        if self.preset != CUSTOM and self.preset not in PRESETS:
            raise ParameterError(
                f"unknown preset {self.preset!r}; expected one of carotid, radial, custom"
            )
        if self.preset == CUSTOM:
            if self.alpha is None or self.gamma is None:
                raise ParameterError("preset 'custom' requires both alpha and gamma")
        else:
            p = PRESETS[self.preset]
            alpha = p.alpha if self.alpha is None else float(self.alpha)
            gamma = p.gamma if self.gamma is None else float(self.gamma)
            if (alpha, gamma) != (p.alpha, p.gamma):
                set_("preset", CUSTOM)
            set_("alpha", alpha)
            set_("gamma", gamma)
        NormalizationParams(self.alpha, self.gamma)
        compute_sigma(self.fd_hz, self.fs_hz)
        if not 0 < self.band_lo_hz < self.band_hi_hz < self.fs_hz / 2:
            raise ParameterError(
                f"band {self.band_lo_hz}-{self.band_hi_hz} Hz is illegal at fs={self.fs_hz} Hz"
            )

    @property
    def normalization(self) -> NormalizationParams:
        return NormalizationParams(self.alpha, self.gamma)

    def replace(self, **changes) -> "PipelineConfig":
        if "preset" in changes and changes["preset"] != CUSTOM:
            changes.setdefault("alpha", None)
            changes.setdefault("gamma", None)
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ParameterError(f"config {path} must hold a JSON object")
    return PipelineConfig.from_dict(data)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


class PulsationExtractor:
    """Push frames in, get pulsation maps out.

    The first map appears after ``2r + 1`` frames and describes frame ``r``;
    after that each input yields one map.  The first ``settling_frames``
    maps are flagged ``settling``.
    """

    def __init__(self, config: PipelineConfig, shape, dtype=np.float32,
                 backend=None, threads: Optional[int] = None):
        self.config = config
        self.shape = tuple(shape)
        self.dtype = np.dtype(dtype)
        self.backend = _backend.get(backend)
        self.threads = threads or _backend.default_threads()
        self.kernel = build_kernel(config.kernel_kind, config.fd_hz, config.fs_hz,
                                   config.match_linear_gain)
        self.design = design_butterworth_bandpass(config.band_lo_hz, config.band_hi_hz,
                                                  config.fs_hz)
        self.window = TemporalWindow(self.kernel, self.shape, self.dtype, self.backend,
                                     self.threads)
        self.bank = make_bank(self.design, self.shape, config.realization, self.dtype,
                              self.backend, self.threads)
        self.params = config.normalization
        self.maps_emitted = 0

    @property
    def group_delay(self) -> int:
        return self.kernel.radius

    @property
    def warmup_frames(self) -> int:
        """Inputs consumed before the first map appears, minus one."""
        return 2 * self.kernel.radius

    @property
    def settling_frames(self) -> int:
        return self.design.settling_frames

    def reset(self):
        self.window.reset()
        self.bank.reset()
        self.maps_emitted = 0

    def push(self, frame: Frame) -> Optional[PulsationMap]:
        t0 = time.perf_counter()
        acc = self.window.push(frame)
        t1 = time.perf_counter()
        if acc is None:
            return None
        filtered = self.bank.step(acc.data, acc.index)
        t2 = time.perf_counter()
        data = normalize_array(filtered, self.params, self.backend, self.threads, acc.index)
        t3 = time.perf_counter()
        settling = self.maps_emitted < self.settling_frames
        self.maps_emitted += 1
        timings = {"temporal": t1 - t0, "bandpass": t2 - t1, "normalize": t3 - t2,
                   "total": t3 - t0}
        return PulsationMap(data, acc.index, settling, acc.timestamp, timings)

    def summary(self) -> dict:
        return {
            "kernel": self.kernel.kind,
            "sigma_frames": self.kernel.sigma,
            "kernel_radius": self.kernel.radius,
            "group_delay_frames": self.group_delay,
            "warmup_frames": self.warmup_frames,
            "settling_maps": self.settling_frames,
        }


def check_rate(stream: FrameStream, config: PipelineConfig) -> None:
    if not math.isclose(stream.header.fps, config.fs_hz, rel_tol=1e-9):
        raise ParameterError(
            f"stream runs at {stream.header.fps} Hz but the config expects fs_hz={config.fs_hz}"
        )


def extract_pulsation_map_pipeline(stream: FrameStream, config: Optional[PipelineConfig] = None,
                                   dtype=np.float32, backend=None,
                                   threads: Optional[int] = None) -> Iterator[PulsationMap]:
    """Lazily map a frame stream to pulsation maps; memory is O(kernel length x pixels)."""
    config = config or PipelineConfig()
    check_rate(stream, config)
    extractor = PulsationExtractor(config, stream.header.shape, dtype, backend, threads)
    for frame in stream:
        pm = extractor.push(frame)
        if pm is not None:
            yield pm
