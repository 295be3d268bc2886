import dataclasses
import math

import numpy as np
import pytest

from pulsemap.errors import ParameterError
from pulsemap.phantom import (DriftEdge, PhantomRenderer, PhantomSpec, PulsatingRing,
                              SpeckleParams, default_carotid_phantom, default_interosseous_phantom,
                              default_phantom, default_radial_phantom, generate_phantom,
                              load_ground_truth, load_spec, render_frame, save_spec,
                              write_ground_truth)
from pulsemap.pipeline import extract_pulsation_map_pipeline

DEFAULT_NAMES = ["carotid", "radial", "interosseous"]


def _small(**kw):
    ring = PulsatingRing(center=(20.0, 20.0), base_radius=8.0, amplitude=0.5)
    base = dict(width=48, height=40, duration=7.0, rings=(ring,), seed=3)
    base.update(kw)
    return PhantomSpec(**base)


@pytest.mark.parametrize("name", DEFAULT_NAMES)
def test_defaults_validate(name):
    spec = default_phantom(name).validate()
    assert spec.fps == 30.0
    assert all(r.freq == 1.5 for r in spec.rings)
    assert spec.frame_count >= spec.min_frames()


def test_radial_diameter():
    ring = default_radial_phantom().rings[0]
    assert 2 * ring.base_radius == pytest.approx(25.1)
    assert round(2 * ring.base_radius) == 25


def test_carotid_larger_than_radial():
    assert default_carotid_phantom().rings[0].base_radius > 2 * default_radial_phantom().rings[0].base_radius


def test_min_frames_rule():
    spec = _small()
    # 2r warm-up (44) + settling (100) + two 20-frame periods
    assert spec.min_frames() == 44 + 100 + 40
    with pytest.raises(ParameterError, match="frames"):
        _small(duration=6.0).validate()


def test_unknown_default():
    with pytest.raises(ParameterError, match="carotid"):
        default_phantom("aorta")


@pytest.mark.parametrize("ring_kw", [dict(freq=15.0), dict(freq=0.0), dict(amplitude=3.0, wall_thickness=6.0),
                                     dict(amplitude=-1.0)])
def test_ring_validation(ring_kw):
    ring = dataclasses.replace(_small().rings[0], **ring_kw)
    with pytest.raises(ParameterError):
        _small(rings=(ring,)).validate()


def test_edge_validation():
    with pytest.raises(ParameterError, match="velocity"):
        _small(drift_edges=(DriftEdge(0.0, 40.0, 0.0),)).validate()


def test_overlap_rejected():
    # a vertical band sweeping across the ring
    edge = DriftEdge(orientation=0.0, position0=5.0, velocity=0.2)
    with pytest.raises(ParameterError, match="overlaps"):
        _small(drift_edges=(edge,)).validate()
    # one that stops short of the ring is fine
    edge = DriftEdge(orientation=0.0, position0=-40.0, velocity=-0.05)
    _small(drift_edges=(edge,)).validate()


def test_determinism_and_seed():
    spec = default_radial_phantom()
    a = render_frame(spec, 17)
    b = render_frame(spec, 17)
    assert a.tobytes() == b.tobytes()
    c = render_frame(spec.replace(seed=spec.seed + 1), 17)
    assert a.tobytes() != c.tobytes()


def test_frame_order_independence():
    spec = _small(speckle=SpeckleParams(jitter=0.05))
    r1, r2 = PhantomRenderer(spec), PhantomRenderer(spec)
    seq = [r1.frame(n) for n in range(spec.frame_count)]
    for n in reversed(range(0, spec.frame_count, 7)):
        assert r2.frame(n).tobytes() == seq[n].tobytes()


def test_jitter_changes_frames_static_does_not():
    spec = _small(rings=(dataclasses.replace(_small().rings[0], amplitude=0.0),))
    r = PhantomRenderer(spec)
    assert r.frame(0).tobytes() == r.frame(50).tobytes()
    rj = PhantomRenderer(spec.replace(speckle=SpeckleParams(jitter=0.05)))
    assert rj.frame(0).tobytes() != rj.frame(50).tobytes()


def test_ring_radius_law():
    ring = PulsatingRing(center=(0, 0), base_radius=10, amplitude=2, freq=1.5, phase=0.3)
    n = np.arange(40)
    np.testing.assert_allclose(ring.radius(n, 30.0),
                               10 + 2 * np.sin(2 * np.pi * 1.5 * n / 30 + 0.3))


@pytest.mark.parametrize("name", DEFAULT_NAMES)
def test_period_mean_matches_static_scene(name):
    spec = default_phantom(name)
    still = spec.replace(rings=tuple(dataclasses.replace(r, amplitude=0.0) for r in spec.rings))
    period = int(round(spec.fps / 1.5))
    # drift edges move, so compare the scene with them removed
    r = PhantomRenderer(spec.replace(drift_edges=()), np.float64)
    s = PhantomRenderer(still.replace(drift_edges=()), np.float64)
    mean = np.mean([r.frame(n) for n in range(period)], axis=0)
    ref = s.frame(0)
    assert np.max(np.abs(mean - ref) / ref) < 0.01


def test_amplitude_zero_gives_zero_maps():
    spec = _small(rings=(dataclasses.replace(_small().rings[0], amplitude=0.0),))
    stream, _ = generate_phantom(spec)
    maps = list(extract_pulsation_map_pipeline(stream))
    assert maps and all(pm.data.max() == 0 for pm in maps)


def test_drift_translation():
    edge = DriftEdge(orientation=0.0, position0=10.0, velocity=1 / 6, thickness=4.0)
    spec = PhantomSpec(width=64, height=8, duration=7.0, drift_edges=(edge,), speckle=None)
    r = PhantomRenderer(spec, np.float64)

    def profile(n):
        m = r.drift_mask(n)
        return np.where(m, r.frame(n) - spec.background, 0.0).mean(axis=0)

    # six frames move the band exactly one pixel
    a, b = profile(30), profile(36)
    xc = np.correlate(b, a, mode="full")
    assert np.argmax(xc) - (len(a) - 1) == 1
    # consecutive frames: sub-pixel peak of the cross-correlation
    for n in (30, 90, 150):
        a, b = profile(n), profile(n + 1)
        c = np.correlate(b, a, mode="full")
        k = int(np.argmax(c))
        shift = k - (len(a) - 1) + 0.5 * (c[k - 1] - c[k + 1]) / (c[k - 1] - 2 * c[k] + c[k + 1])
        assert shift == pytest.approx(1 / 6, abs=0.02)
    # and the rendered geometry itself is a pure translation
    s0 = r.scene(30)[0]
    s6 = r.scene(36)[0]
    np.testing.assert_allclose(s6[1:], s0[:-1], atol=1e-9)


def test_ground_truth_masks():
    spec = default_radial_phantom()
    stream, gt = generate_phantom(spec)
    assert gt.pulsation_mask(0).shape == spec.shape
    for n in (0, 150, spec.frame_count - 1):
        assert not (gt.pulsation_mask(n) & gt.drift_mask(n)).any()
        assert gt.drift_mask(n).any()
    ring = spec.rings[0]
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    d = np.hypot(xx - ring.center[0], yy - ring.center[1])
    np.testing.assert_array_equal(gt.pulsation_mask(0),
                                  (d >= ring.mask_inner) & (d <= ring.mask_outer))


def test_interosseous_has_two_disjoint_rings():
    gt = generate_phantom(default_interosseous_phantom())[1]
    a, b = gt.ring_masks()
    assert a.any() and b.any() and not (a & b).any()


def test_spec_json_round_trip(tmp_path):
    spec = default_interosseous_phantom()
    save_spec(spec, tmp_path / "s.json")
    assert load_spec(tmp_path / "s.json") == spec
    (tmp_path / "bad.json").write_text('{"width": 3, "height": 3, "colour": 1}')
    with pytest.raises(ParameterError):
        load_spec(tmp_path / "bad.json")


def test_ground_truth_disk_round_trip(tmp_path):
    spec = _small(drift_edges=(DriftEdge(orientation=0.0, position0=-30.0, velocity=0.1,
                                         thickness=3.0),), width=48)
    _, gt = generate_phantom(spec)
    write_ground_truth(gt, tmp_path / "gt")
    back = load_ground_truth(tmp_path / "gt")
    assert len(back) == spec.frame_count
    np.testing.assert_array_equal(back.pulsation_mask(0), gt.pulsation_mask(0))
    for n in (0, 100, spec.frame_count - 1):
        np.testing.assert_array_equal(back.drift_mask(n), gt.drift_mask(n))
    with pytest.raises(FileNotFoundError):
        load_ground_truth(tmp_path / "missing")
