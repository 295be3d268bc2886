"""Turn filtered acceleration into displayable pulsation and heat maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from pulsemap import _backend
from pulsemap.errors import NumericError, ParameterError

CLAMP_LO = 0.0
CLAMP_HI = 255.0


@dataclass(frozen=True)
class NormalizationParams:
    """Magnification ``alpha > 1`` and gamma exponent ``0 < gamma < 1``."""

    alpha: float
    gamma: float

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ParameterError(f"alpha must exceed 1.0, got {self.alpha}")
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def clamp_lo(self) -> float:
        return CLAMP_LO

    @property
    def clamp_hi(self) -> float:
        return CLAMP_HI


# Empirical settings for the two scan targets.
PRESETS = {
    "carotid": NormalizationParams(alpha=38.0, gamma=0.80),
    "radial": NormalizationParams(alpha=20.0, gamma=0.65),
}


def preset(name: str) -> NormalizationParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(
            f"unknown preset {name!r}; expected one of {', '.join(sorted(PRESETS))}"
        ) from None


@dataclass
class PulsationMap:
    """One normalized map, aligned to the input frame it describes.

    ``data`` holds intensities in ``[0, 255]``.  ``settling`` marks maps
    produced while the bandpass state was still warming up.  ``timings``
    maps stage names to seconds spent on this map.
    """

    data: np.ndarray
    source_frame_index: int
    settling: bool = False
    timestamp: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data).astype(np.uint8)


def normalize_array(ifa: np.ndarray, params: NormalizationParams, backend=None,
                    threads: Optional[int] = None, frame_index: Optional[int] = None) -> np.ndarray:
    """``clamp((alpha*|ifa|) ** (1/gamma), 0, 255)`` pixelwise.

    The power is applied before the clamp.  Infinite inputs saturate at 255;
    NaN raises :class:`NumericError` naming the pixel.
    """
    be = _backend.get(backend)
    x = np.asarray(ifa)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    x = np.ascontiguousarray(x)
    if x.ndim != 2:
        raise ParameterError(f"expected a 2-D array, got shape {x.shape}")
    out = np.empty_like(x)
    bad = be.normalize(x, params.alpha, 1.0 / params.gamma, out,
                       threads or _backend.default_threads())
    if bad >= 0:
        row, col = divmod(bad, x.shape[1])
        where = "" if frame_index is None else f" in frame {frame_index}"
        raise NumericError(f"NaN filtered intensity at pixel (x={col}, y={row}){where}",
                           frame_index=frame_index, pixel=(col, row))
    return out


def normalize(ifa, params: NormalizationParams, source_frame_index: Optional[int] = None,
              settling: bool = False, backend=None, threads: Optional[int] = None) -> PulsationMap:
    """Normalize one filtered frame (a :class:`~pulsemap.frames.Frame` or array)."""
    data = getattr(ifa, "data", ifa)
    idx = source_frame_index if source_frame_index is not None else getattr(ifa, "index", 0)
    out = normalize_array(data, params, backend, threads, idx)
    return PulsationMap(out, idx, settling, getattr(ifa, "timestamp", 0.0))


# --------------------------------------------------------------------------- LUT

@dataclass(frozen=True)
class HeatMapLUT:
    """256 RGB entries; entry 0 is the darkest."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.shape != (256, 3):
            raise ParameterError(f"heat-map LUT needs 256 RGB rows, got shape {t.shape}")
        if t.min() < 0 or t.max() > 255:
            raise ParameterError("heat-map LUT entries must lie in 0..255")
        t = t.astype(np.uint8)
        t.flags.writeable = False
        object.__setattr__(self, "table", t)

    def __len__(self):
        return 256

    def __getitem__(self, i):
        return self.table[i]


def load_lut(path=None) -> HeatMapLUT:
    """Read a LUT CSV with columns ``index,r,g,b``; the shipped table by default."""
    if path is None:
        text = resources.files("pulsemap").joinpath("data/heatmap_lut.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    if len(rows) != 256:
        raise ParameterError(f"LUT file must have 256 rows, found {len(rows)}")
    table = np.zeros((256, 3), dtype=np.int64)
    for row in rows:
        i = int(row["index"])
        if not 0 <= i < 256:
            raise ParameterError(f"LUT index out of range: {i}")
        table[i] = [int(row["r"]), int(row["g"]), int(row["b"])]
    return HeatMapLUT(table)


def render_heatmap(pm, lut: Optional[HeatMapLUT] = None) -> np.ndarray:
    """Look up every pixel of `pm` in `lut`; returns a ``(H, W, 3)`` uint8 image."""
    lut = lut or load_lut()
    data = getattr(pm, "data", pm)
    idx = np.clip(np.rint(np.asarray(data)), 0, 255).astype(np.intp)
    return lut.table[idx]


def write_heatmap(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)
