import io

import numpy as np
import pytest

from pulsemap.bandpass import design_butterworth_bandpass, frequency_response
from pulsemap.errors import DimensionMismatchError, ParameterError
from pulsemap.metrics import (EnergyConcentration, LatencyStats, detection_rate,
                              energy_concentration, measure_latency, measure_tone_gain,
                              synthetic_stream, top_decile_coverage, top_fraction_mask)
from pulsemap.pipeline import PipelineConfig
from pulsemap.render import PulsationMap
from pulsemap.temporal import build_kernel


class _GT:
    def __init__(self, pulsation, drift=None, rings=None):
        self.p = pulsation
        self.d = np.zeros_like(pulsation) if drift is None else drift
        self.rings = rings or [pulsation]

    def pulsation_mask(self, n):
        return self.p

    def drift_mask(self, n):
        return self.d

    def ring_masks(self, n=0):
        return self.rings


def _mask(shape=(6, 8)):
    m = np.zeros(shape, bool)
    m[2:4, 3:6] = True
    return m


def test_all_zero_maps_saturated():
    maps = [PulsationMap(np.zeros((6, 8)), i) for i in range(3)]
    rep = energy_concentration(maps, _GT(_mask()))
    assert rep.in_region_mean == 0 and rep.out_region_mean == 0
    assert rep.saturated and rep.ratio is None and rep.frames_evaluated == 3


def test_perfect_localization():
    m = _mask()
    rep = energy_concentration([PulsationMap(255.0 * m, 0)], _GT(m))
    assert rep.in_region_mean == 255 and rep.out_region_mean == 0 and rep.saturated


def test_ratio_and_drift_exclusion():
    m = _mask()
    drift = np.zeros_like(m)
    drift[0, :] = True
    data = np.where(m, 100.0, 1.0)
    data[0, :] = 50.0
    rep = energy_concentration([PulsationMap(data, 0)], _GT(m, drift))
    assert rep.in_region_mean == 100 and rep.out_region_mean == 1 and rep.drift_region_mean == 50
    assert rep.ratio == 100


def test_skip_settling():
    m = _mask()
    maps = [PulsationMap(np.full((6, 8), 9.0), 0, settling=True), PulsationMap(255.0 * m, 1)]
    assert energy_concentration(maps, _GT(m)).frames_evaluated == 1
    assert energy_concentration(maps, _GT(m), skip_settling=False).frames_evaluated == 2
    with pytest.raises(ParameterError):
        energy_concentration(maps[:1], _GT(m))


def test_errors():
    with pytest.raises(ParameterError):
        energy_concentration([PulsationMap(np.ones((6, 8)), 0)], _GT(np.zeros((6, 8), bool)))
    with pytest.raises(DimensionMismatchError):
        energy_concentration([PulsationMap(np.ones((5, 8)), 0)], _GT(_mask()))


def test_permutation_invariance(rng):
    m = rng.random((10, 12)) < 0.2
    d = (rng.random((10, 12)) < 0.2) & ~m
    maps = [rng.uniform(0, 255, (10, 12)) for _ in range(4)]
    perm = rng.permutation(120)
    p = lambda a: a.ravel()[perm].reshape(10, 12)
    a = energy_concentration([PulsationMap(x, i) for i, x in enumerate(maps)], _GT(m, d))
    b = energy_concentration([PulsationMap(p(x), i) for i, x in enumerate(maps)], _GT(p(m), p(d)))
    assert a.in_region_mean == pytest.approx(b.in_region_mean, rel=1e-12)
    assert a.out_region_mean == pytest.approx(b.out_region_mean, rel=1e-12)
    assert a.ratio == pytest.approx(b.ratio, rel=1e-12)


def test_report_json():
    rep = EnergyConcentration(3.0, 1.0, 0.5, 3.0, 10)
    assert '"ratio": 3.0' in rep.to_json()


def test_top_fraction():
    data = np.arange(100, dtype=float).reshape(10, 10)
    top = top_fraction_mask(data)
    assert top.sum() == 10 and top[9].all()
    assert not top_fraction_mask(np.zeros((10, 10))).any()
    m = np.zeros((10, 10), bool)
    m[9, :5] = True
    m[0, :5] = True
    assert top_decile_coverage(data, [m]) == [0.5]


def test_detection_rate():
    a = np.zeros((10, 10), bool)
    a[0, :4] = True
    b = np.zeros((10, 10), bool)
    b[9, :4] = True
    good = np.where(a | b, 200.0, 0.0)
    bad = np.where(a, 200.0, 0.0)
    maps = [PulsationMap(good, 0), PulsationMap(good, 1), PulsationMap(bad, 2),
            PulsationMap(good, 3)]
    rate, cov = detection_rate(maps, _GT(a | b, rings=[a, b]))
    assert rate == 0.75 and cov.shape == (4, 2)


# --------------------------------------------------------------------------- latency

def test_tiny_latency_run():
    stats = measure_latency(synthetic_stream(8, 8), PipelineConfig(), groups=1,
                            frames_per_group=10)
    assert stats.frames == 10 and (stats.width, stats.height) == (8, 8)
    assert stats.min <= stats.median <= stats.p95 <= stats.max


def test_latency_csv_recomputes_summary():
    stats = measure_latency(synthetic_stream(16, 12), PipelineConfig(), groups=2,
                            frames_per_group=7)
    buf = io.StringIO()
    stats.write_csv(buf)
    assert len(buf.getvalue().splitlines()) == 14
    buf.seek(0)
    back = LatencyStats.read_csv(buf, 16, 12, 2)
    assert back.summary() == stats.summary()


def test_latency_needs_frames():
    with pytest.raises(ParameterError, match="frames"):
        measure_latency(synthetic_stream(8, 8, frames=60), PipelineConfig(), groups=1,
                        frames_per_group=20)


def test_latency_grows_with_resolution():
    cfg = PipelineConfig()
    small = measure_latency(synthetic_stream(418, 328), cfg, groups=1, frames_per_group=12)
    large = measure_latency(synthetic_stream(837, 657), cfg, groups=1, frames_per_group=12)
    assert large.p95 >= small.p95


def test_synthetic_stream_cycles():
    frames = list(synthetic_stream(4, 3, frames=130, bank_size=60))
    assert len(frames) == 130
    np.testing.assert_array_equal(frames[0].data, frames[60].data)


# --------------------------------------------------------------------------- tone gain

def test_dog_gain_at_peak():
    k = build_kernel("dog", 1.5, 30.0)
    freqs = np.linspace(0.5, 4.0, 35001)
    mags = np.abs(k.response(freqs))
    f_peak = freqs[np.argmax(mags)]
    g = measure_tone_gain(k, f_peak, 30.0, settle_frames=0)
    assert g == pytest.approx(mags.max(), rel=1e-3)


def test_bandpass_stopband_gain():
    d = design_butterworth_bandpass(0.9, 2.0, 30.0)
    peak = measure_tone_gain(d, 1.36, 30.0, settle_frames=600)
    low = measure_tone_gain(d, 0.3, 30.0, settle_frames=600)
    assert 20 * np.log10(peak / low) >= 20
    assert low == pytest.approx(frequency_response(d, [0.3])[0][0], rel=0.01)


@pytest.mark.parametrize("stage", ["dog", "deriv1", "bandpass"])
def test_zero_frequency_gain(stage):
    obj = design_butterworth_bandpass(0.9, 2.0, 30.0) if stage == "bandpass" \
        else build_kernel(stage, 1.5, 30.0)
    assert measure_tone_gain(obj, 0.0, 30.0, settle_frames=600) <= 1e-6


def test_callable_stage():
    assert measure_tone_gain(lambda x: 2.5 * x, 1.0, 30.0, 0) == pytest.approx(2.5, rel=1e-12)


def test_tone_gain_errors():
    k = build_kernel("dog", 1.5, 30.0)
    with pytest.raises(ParameterError):
        measure_tone_gain(k, 15.0, 30.0, 0)
    with pytest.raises(ParameterError):
        measure_tone_gain(k, 1.5, 30.0, settle_frames=100, n_frames=80)
    with pytest.raises(ParameterError):
        measure_tone_gain(object(), 1.5, 30.0, 0)
