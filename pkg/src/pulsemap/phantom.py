"""Synthetic ultrasound-like sequences with known pulsating structures.

A phantom is a static background with three kinds of content:

* pulsating rings: a bright wall of fixed thickness whose radius follows
  ``base_radius + amplitude * sin(2 pi freq n / fps + phase)``;
* drift edges: bright straight bands translating at a constant velocity
  along their normal, standing in for tissue boundaries swept past a
  moving probe;
* speckle: a multiplicative texture, static in time unless jitter is
  switched on.

Structures are rendered with a Gaussian point-spread of width ``softness``
(the difference of two error functions across the wall), which keeps the
rim anti-aliased and the temporal signal free of sampling steps.

Randomness comes from numpy's PCG64 generator.  The static speckle field is
seeded with ``seed``; per-frame jitter uses ``SeedSequence([seed, n])``, so
any frame can be rendered independently of the others.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import erf

from pulsemap.bandpass import design_butterworth_bandpass
from pulsemap.errors import DimensionMismatchError, ParameterError
from pulsemap.frames import (Frame, FrameStream, StreamHeader, frame_filename, read_image,
                             write_image)
from pulsemap.temporal import compute_sigma, kernel_radius

MM_PER_PIXEL = 0.1
SPEC_VERSION = 1
# filter settings assumed when checking that a phantom is long enough
REFERENCE_FD_HZ = 1.5
REFERENCE_BAND_HZ = (0.9, 2.0)


@dataclass(frozen=True)
class PulsatingRing:
    center: Tuple[float, float]
    base_radius: float
    amplitude: float
    freq: float = 1.5
    phase: float = 0.0
    wall_brightness: float = 120.0
    wall_thickness: float = 3.0
    softness: float = 2.0
    margin: float = 2.0

    def validate(self, fps: float):
        if not 0 < self.freq < fps / 2:
            raise ParameterError(f"ring frequency {self.freq} Hz must lie in (0, {fps / 2}) Hz")
        if self.amplitude < 0:
            raise ParameterError("ring amplitude must be non-negative")
        if self.wall_thickness <= 0 or self.softness <= 0:
            raise ParameterError("ring wall_thickness and softness must be positive")
        if not self.base_radius > self.amplitude + self.wall_thickness:
            raise ParameterError(
                f"ring base_radius {self.base_radius} must exceed amplitude + wall_thickness "
                f"({self.amplitude + self.wall_thickness})"
            )

    def radius(self, n, fps: float):
        return self.base_radius + self.amplitude * np.sin(
            2 * np.pi * self.freq * np.asarray(n) / fps + self.phase)

    @property
    def mask_inner(self) -> float:
        return max(0.0, self.base_radius - self.amplitude - self.wall_thickness / 2
                   - 2 * self.softness - self.margin)

    @property
    def mask_outer(self) -> float:
        """Outer radius of the ground-truth annulus over the whole excursion."""
        return (self.base_radius + self.amplitude + self.wall_thickness / 2
                + 2 * self.softness + self.margin)


@dataclass(frozen=True)
class DriftEdge:
    """A band whose centre line is ``x cos(orientation) + y sin(orientation) = p(n)``.

    ``p(n) = position0 + velocity * n``; `orientation` is the direction of
    the band normal, i.e. the direction of travel.
    """

    orientation: float
    position0: float
    velocity: float
    brightness: float = 80.0
    thickness: float = 4.0
    softness: float = 3.0
    margin: float = 2.0

    def validate(self, fps: float):
        if not abs(self.velocity) > 0:
            raise ParameterError("drift edge velocity must be non-zero")
        if self.thickness <= 0 or self.softness <= 0:
            raise ParameterError("drift edge thickness and softness must be positive")

    def position(self, n) -> float:
        return self.position0 + self.velocity * n

    def mask_halfwidth(self, window_radius: int) -> float:
        # the map at frame n sees the band anywhere within n +/- window_radius
        return (self.thickness / 2 + 2 * self.softness + self.margin
                + abs(self.velocity) * window_radius)


@dataclass(frozen=True)
class SpeckleParams:
    """Gamma-distributed multiplicative texture with unit mean.

    `shape` is the Gamma shape parameter (contrast falls as it grows),
    `grain` the Gaussian smoothing in pixels, `jitter` the relative std of
    an optional per-frame fluctuation (0 keeps the speckle static).
    """

    shape: float = 6.0
    grain: float = 0.8
    jitter: float = 0.0

    def validate(self):
        if self.shape <= 0 or self.grain < 0 or self.jitter < 0:
            raise ParameterError("speckle shape must be positive, grain and jitter non-negative")


@dataclass(frozen=True)
class PhantomSpec:
    width: int
    height: int
    fps: float = 30.0
    duration: float = 10.0
    rings: Tuple[PulsatingRing, ...] = ()
    drift_edges: Tuple[DriftEdge, ...] = ()
    speckle: Optional[SpeckleParams] = field(default_factory=SpeckleParams)
    seed: int = 0
    background: float = 40.0
    mm_per_pixel: float = MM_PER_PIXEL
    name: str = "custom"
    version: int = SPEC_VERSION

    def __post_init__(self):
        object.__setattr__(self, "rings", tuple(self.rings))
        object.__setattr__(self, "drift_edges", tuple(self.drift_edges))

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.fps))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def window_radius(self) -> int:
        return kernel_radius(compute_sigma(REFERENCE_FD_HZ, self.fps))

    def min_frames(self) -> int:
        """Frames needed for steady-state output plus two pulsation periods."""
        settling = design_butterworth_bandpass(*REFERENCE_BAND_HZ, self.fps).settling_frames
        slowest = min([r.freq for r in self.rings], default=REFERENCE_FD_HZ)
        return 2 * self.window_radius + settling + 2 * math.ceil(self.fps / slowest)

    def validate(self) -> "PhantomSpec":
        if self.width < 1 or self.height < 1:
            raise ParameterError("phantom width and height must be positive")
        if not self.fps > 0 or not self.duration > 0:
            raise ParameterError("phantom fps and duration must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.fps < 4 * REFERENCE_FD_HZ:
            raise ParameterError(f"fps {self.fps} too low for the reference filters")
        for ring in self.rings:
            ring.validate(self.fps)
        for edge in self.drift_edges:
            edge.validate(self.fps)
        if self.speckle is not None:
            self.speckle.validate()
        need = self.min_frames()
        if self.frame_count < need:
            raise ParameterError(
                f"phantom has {self.frame_count} frames; at least {need} are needed for "
                f"steady-state output over two pulsation periods"
            )
        self._check_layout()
        return self

    def _check_layout(self):
        last = self.frame_count - 1
        for i, ring in enumerate(self.rings):
            cx, cy = ring.center
            for j, edge in enumerate(self.drift_edges):
                s = cx * math.cos(edge.orientation) + cy * math.sin(edge.orientation)
                h = edge.mask_halfwidth(self.window_radius)
                # the band centre moves linearly, so the closest approach is at an end
                # unless it crosses the ring centre in between
                p0, p1 = edge.position(0), edge.position(last)
                if min(p0, p1) <= s <= max(p0, p1):
                    gap = 0.0
                else:
                    gap = min(abs(s - p0), abs(s - p1))
                if gap <= h + ring.mask_outer:
                    raise ParameterError(
                        f"drift edge {j} overlaps ring {i}: closest approach {gap:.2f} px "
                        f"<= {h + ring.mask_outer:.2f} px"
                    )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rings"] = [dict(r, center=list(r["center"])) for r in d["rings"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        try:
            d["rings"] = tuple(PulsatingRing(**dict(r, center=tuple(r["center"])))
                               for r in d.get("rings", ()))
            d["drift_edges"] = tuple(DriftEdge(**e) for e in d.get("drift_edges", ()))
            if d.get("speckle") is not None:
                d["speckle"] = SpeckleParams(**d["speckle"])
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(f"malformed phantom spec: {exc}") from None

    def replace(self, **changes) -> "PhantomSpec":
        return dataclasses.replace(self, **changes)


def save_spec(spec: PhantomSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path) -> PhantomSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"phantom spec {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ParameterError(f"phantom spec {path} must hold a JSON object")
    return PhantomSpec.from_dict(data)


# --------------------------------------------------------------------------- rendering

def _band(dist, lo, hi, softness):
    """Fraction of a Gaussian spot at `dist` falling inside ``[lo, hi]``."""
    k = 1.0 / (softness * math.sqrt(2.0))
    return 0.5 * (erf((hi - dist) * k) - erf((lo - dist) * k))


class PhantomRenderer:
    """Renders frames and masks of one spec; static layers are computed once.

    Frame ``n`` depends only on ``(spec, n)``, so frames may be rendered in
    any order, or in parallel, with identical results.
    """

    def __init__(self, spec: PhantomSpec, dtype=np.float32):
        self.spec = spec.validate()
        self.dtype = np.dtype(dtype)
        h, w = spec.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        self._xx, self._yy = xx, yy
        self._ring_dist = [np.hypot(xx - r.center[0], yy - r.center[1]) for r in spec.rings]
        self._edge_coord = [xx * math.cos(e.orientation) + yy * math.sin(e.orientation)
                            for e in spec.drift_edges]
        self._speckle = self._static_speckle()
        rings = np.zeros(spec.shape, dtype=bool)
        self._ring_masks = []
        for ring, dist in zip(spec.rings, self._ring_dist):
            m = (dist >= ring.mask_inner) & (dist <= ring.mask_outer)
            m.flags.writeable = False
            self._ring_masks.append(m)
            rings |= m
        rings.flags.writeable = False
        self._pulsation_mask = rings

    def _static_speckle(self) -> Optional[np.ndarray]:
        sp = self.spec.speckle
        if sp is None:
            return None
        rng = np.random.Generator(np.random.PCG64(self.spec.seed))
        field_ = rng.gamma(sp.shape, 1.0 / sp.shape, size=self.spec.shape)
        if sp.grain > 0:
            field_ = gaussian_filter(field_, sp.grain, mode="reflect")
            field_ /= field_.mean()
        return field_

    def _jitter(self, n: int) -> np.ndarray:
        sp = self.spec.speckle
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.spec.seed, n])))
        return 1.0 + sp.jitter * rng.standard_normal(self.spec.shape)

    def scene(self, n: int) -> np.ndarray:
        """Noise-free intensity of frame `n` (float64)."""
        spec = self.spec
        img = np.full(spec.shape, spec.background, dtype=np.float64)
        for ring, dist in zip(spec.rings, self._ring_dist):
            r = float(ring.radius(n, spec.fps))
            half = ring.wall_thickness / 2
            img += ring.wall_brightness * _band(dist, r - half, r + half, ring.softness)
        for edge, s in zip(spec.drift_edges, self._edge_coord):
            p = edge.position(n)
            half = edge.thickness / 2
            img += edge.brightness * _band(s, p - half, p + half, edge.softness)
        return img

    def frame(self, n: int) -> np.ndarray:
        if not 0 <= n < self.spec.frame_count:
            raise ParameterError(f"frame {n} outside 0..{self.spec.frame_count - 1}")
        img = self.scene(n)
        if self._speckle is not None:
            img *= self._speckle
            if self.spec.speckle.jitter > 0:
                img *= self._jitter(n)
        return img.astype(self.dtype)

    # ground truth -------------------------------------------------------------
    @property
    def pulsation_mask(self) -> np.ndarray:
        return self._pulsation_mask

    def ring_masks(self) -> List[np.ndarray]:
        return list(self._ring_masks)

    def drift_mask(self, n: int) -> np.ndarray:
        m = np.zeros(self.spec.shape, dtype=bool)
        wr = self.spec.window_radius
        for edge, s in zip(self.spec.drift_edges, self._edge_coord):
            m |= np.abs(s - edge.position(n)) <= edge.mask_halfwidth(wr)
        return m & ~self._pulsation_mask

    def stream(self) -> FrameStream:
        spec = self.spec
        header = StreamHeader(spec.width, spec.height, spec.fps, spec.frame_count, 8)

        def frames() -> Iterator[Frame]:
            for n in range(spec.frame_count):
                yield Frame(self.frame(n), n, n / spec.fps)

        return FrameStream(header, frames, meta={"phantom": spec.name})


class GroundTruth:
    """Per-frame masks of the pulsating walls and of the drift-edge regions.

    The pulsation mask covers each ring's annulus over its full radial
    excursion, so it is the same in every frame.  The drift mask follows
    the bands and includes the distance they travel within one temporal
    window.  The two never overlap.
    """

    def __init__(self, renderer: PhantomRenderer):
        self._r = renderer
        self.frame_count = renderer.spec.frame_count
        self.shape = renderer.spec.shape

    def pulsation_mask(self, n: int = 0) -> np.ndarray:
        return self._r.pulsation_mask

    def ring_masks(self, n: int = 0) -> List[np.ndarray]:
        return self._r.ring_masks()

    def drift_mask(self, n: int) -> np.ndarray:
        return self._r.drift_mask(n)

    def __len__(self):
        return self.frame_count


def generate_phantom(spec: PhantomSpec, dtype=np.float32) -> Tuple[FrameStream, GroundTruth]:
    """Lazy frame stream and ground truth for `spec`.

    Frames are floating intensities on a 0-255 scale; nothing is
    quantized, so they can be fed straight into the pipeline.
    """
    renderer = PhantomRenderer(spec, dtype)
    return renderer.stream(), GroundTruth(renderer)


def render_frame(spec: PhantomSpec, n: int, dtype=np.float32) -> np.ndarray:
    return PhantomRenderer(spec, dtype).frame(n)


# --------------------------------------------------------------------------- defaults

def _mm(value_mm: float, mm_per_pixel: float) -> float:
    return value_mm / mm_per_pixel


def default_radial_phantom(mm_per_pixel: float = MM_PER_PIXEL, seed: int = 2024) -> PhantomSpec:
    """Radial-artery scale: a ring of 2.51 mm diameter plus two drifting edges."""
    radius = _mm(2.51, mm_per_pixel) / 2
    ring = PulsatingRing(center=(160.0, 120.0), base_radius=radius, amplitude=0.5,
                         freq=1.5, phase=0.0, wall_brightness=120.0, wall_thickness=3.0)
    edges = (
        DriftEdge(orientation=math.radians(80), position0=40.0, velocity=1 / 6,
                  brightness=80.0, thickness=4.0),
        DriftEdge(orientation=math.radians(-10), position0=230.0, velocity=-1 / 6,
                  brightness=80.0, thickness=4.0),
    )
    return PhantomSpec(width=320, height=240, fps=30.0, duration=10.0, rings=(ring,),
                       drift_edges=edges, speckle=SpeckleParams(), seed=seed,
                       mm_per_pixel=mm_per_pixel, name="radial")


def default_carotid_phantom(mm_per_pixel: float = MM_PER_PIXEL, seed: int = 2024) -> PhantomSpec:
    """Carotid scale: a 6.5 mm ring filling a larger part of the frame."""
    radius = _mm(6.5, mm_per_pixel) / 2
    ring = PulsatingRing(center=(160.0, 120.0), base_radius=radius, amplitude=0.6,
                         freq=1.5, phase=0.0, wall_brightness=120.0, wall_thickness=4.0,
                         softness=2.5)
    edges = (
        DriftEdge(orientation=math.radians(85), position0=20.0, velocity=1 / 6,
                  brightness=80.0, thickness=4.0),
    )
    return PhantomSpec(width=320, height=240, fps=30.0, duration=10.0, rings=(ring,),
                       drift_edges=edges, speckle=SpeckleParams(), seed=seed,
                       mm_per_pixel=mm_per_pixel, name="carotid")


def default_interosseous_phantom(mm_per_pixel: float = MM_PER_PIXEL,
                                 seed: int = 2024) -> PhantomSpec:
    """Radial artery plus a smaller interosseous artery pulsing alongside it."""
    radial = default_radial_phantom(mm_per_pixel, seed)
    second = PulsatingRing(center=(80.0, 170.0), base_radius=_mm(1.6, mm_per_pixel) / 2,
                           amplitude=0.4, freq=1.5, phase=0.3, wall_brightness=110.0,
                           wall_thickness=2.5)
    return radial.replace(rings=radial.rings + (second,), name="interosseous")


DEFAULTS = {
    "carotid": default_carotid_phantom,
    "radial": default_radial_phantom,
    "interosseous": default_interosseous_phantom,
}


def default_phantom(name: str) -> PhantomSpec:
    try:
        return DEFAULTS[name]()
    except KeyError:
        raise ParameterError(
            f"unknown phantom {name!r}; expected one of {', '.join(sorted(DEFAULTS))}"
        ) from None


# --------------------------------------------------------------------------- ground truth on disk

GT_SIDECAR = "ground_truth.json"


def write_ground_truth(gt, path) -> None:
    """Store masks as 0/255 PGM files under `path`.

    Layout: ``pulsation.pgm``, ``ring_00.pgm`` ... and ``drift/frame_NNNNNN.pgm``
    for every frame, plus ``ground_truth.json`` describing them.
    """
    path = Path(path)
    (path / "drift").mkdir(parents=True, exist_ok=True)
    write_image(path / "pulsation.pgm", gt.pulsation_mask(0).astype(np.uint8) * 255)
    rings = gt.ring_masks(0)
    for i, m in enumerate(rings):
        write_image(path / f"ring_{i:02d}.pgm", m.astype(np.uint8) * 255)
    for n in range(gt.frame_count):
        write_image(path / "drift" / frame_filename(n, ".pgm"),
                    gt.drift_mask(n).astype(np.uint8) * 255)
    h, w = gt.shape
    with open(path / GT_SIDECAR, "w") as fh:
        json.dump({"frame_count": gt.frame_count, "rings": len(rings), "width": w,
                   "height": h}, fh, indent=2, sort_keys=True)
        fh.write("\n")


class MaskGroundTruth:
    """Ground truth read back from :func:`write_ground_truth` output."""

    def __init__(self, path):
        self.path = Path(path)
        side = self.path / GT_SIDECAR
        if not side.is_file():
            raise FileNotFoundError(f"no ground truth at {self.path} (missing {GT_SIDECAR})")
        with open(side) as fh:
            meta = json.load(fh)
        self.frame_count = int(meta["frame_count"])
        self.shape = (int(meta["height"]), int(meta["width"]))
        self._pulsation = self._load(self.path / "pulsation.pgm")
        self._rings = [self._load(self.path / f"ring_{i:02d}.pgm")
                       for i in range(int(meta["rings"]))]

    def _load(self, p: Path) -> np.ndarray:
        m = read_image(p) > 0
        if m.shape != self.shape:
            raise DimensionMismatchError(f"mask {p} has shape {m.shape}, expected {self.shape}")
        return m

    def pulsation_mask(self, n: int = 0) -> np.ndarray:
        return self._pulsation

    def ring_masks(self, n: int = 0) -> List[np.ndarray]:
        return list(self._rings)

    def drift_mask(self, n: int) -> np.ndarray:
        p = self.path / "drift" / frame_filename(n, ".pgm")
        if not p.is_file():
            return np.zeros(self.shape, dtype=bool)
        return self._load(p)

    def __len__(self):
        return self.frame_count


def load_ground_truth(path) -> MaskGroundTruth:
    return MaskGroundTruth(path)
