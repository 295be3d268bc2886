import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsemap.errors import DimensionMismatchError, ParameterError
from pulsemap.frames import Frame, FrameStream, StreamHeader, stream_from_arrays
from pulsemap.metrics import measure_tone_gain
from pulsemap.temporal import (DERIV1, DOG, TemporalWindow, build_derivative1_kernel,
                               build_dog_kernel, build_kernel, compute_sigma, convolve_valid,
                               stream_temporal_filter)

from conftest import pixel_trace


def _oracle_dog(sigma):
    """Straight transcription: two unit-sum Gaussians on the same grid, subtracted."""
    r = math.ceil(6 * sigma)
    t = np.arange(-r, r + 1, dtype=float)
    g1 = np.exp(-t ** 2 / (2 * (sigma / 2) ** 2))
    g2 = np.exp(-t ** 2 / (2 * (2 * sigma) ** 2))
    return g1 / g1.sum() - g2 / g2.sum()


def _dtft(taps, f, fs):
    r = len(taps) // 2
    k = np.arange(-r, r + 1)
    return abs(np.sum(taps * np.exp(-2j * np.pi * f / fs * k)))


def test_sigma_values():
    assert compute_sigma(1.5, 30.0) == pytest.approx(3.5355339, abs=1e-6)
    assert compute_sigma(30.0 / (4 * math.sqrt(2)), 30.0) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        compute_sigma(16, 30)
    with pytest.raises(ParameterError):
        compute_sigma(0, 30)


def test_dog_kernel_shape_and_taps():
    k = build_dog_kernel(compute_sigma(1.5, 30.0))
    assert (k.radius, k.length) == (22, 45)
    np.testing.assert_allclose(k.taps, _oracle_dog(k.sigma), rtol=0, atol=1e-15)
    assert abs(k.taps.sum()) < 1e-9
    np.testing.assert_array_equal(k.taps, k.taps[::-1])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 20.0))
def test_dog_zero_sum_and_symmetry(sigma):
    k = build_dog_kernel(sigma)
    assert abs(k.taps.sum()) < 1e-9
    np.testing.assert_array_equal(k.taps, k.taps[::-1])
    assert k.radius == max(1, math.ceil(6 * sigma))


def test_derivative_kernel():
    k = build_derivative1_kernel(compute_sigma(1.5, 30.0))
    assert k.taps[k.radius] == 0
    np.testing.assert_array_equal(k.taps, -k.taps[::-1])
    assert abs(k.taps.sum()) < 1e-9
    assert k.kind == DERIV1


def test_ramp_response():
    sigma = compute_sigma(1.5, 30.0)
    ramp = 0.7 * np.arange(200, dtype=float)
    dog = np.convolve(ramp, build_dog_kernel(sigma).taps, mode="valid")
    lin = np.convolve(ramp, build_derivative1_kernel(sigma).taps, mode="valid")
    assert np.max(np.abs(dog)) < 1e-6
    assert np.ptp(lin) < 1e-9 * abs(lin[0])
    assert abs(lin[0]) > 0.1


def test_peak_in_band():
    fs = 30.0
    for fd in (0.5, 1.0, 1.5, 2.0):
        k = build_dog_kernel(compute_sigma(fd, fs))
        freqs = np.linspace(0.01, fs / 2, 3000)
        mags = np.abs(k.response(freqs, fs))
        peak = freqs[np.argmax(mags)]
        assert 0.5 * fd < peak < 2 * fd


def test_gain_matched_linear_kernel():
    dog = build_kernel("dog", 1.5, 30.0)
    lin = build_kernel("deriv1", 1.5, 30.0)
    assert abs(lin.response(1.5)[0]) == pytest.approx(abs(dog.response(1.5)[0]), rel=1e-12)
    raw = build_kernel("deriv1", 1.5, 30.0, match_gain=False)
    assert raw.scale == 1.0 and lin.scale > 1.0


def test_response_matches_dtft_oracle():
    k = build_dog_kernel(compute_sigma(1.5, 30.0))
    for f in (0.3, 1.5, 4.0):
        assert abs(k.response(f, 30.0)[0]) == pytest.approx(_dtft(k.taps, f, 30.0), rel=1e-12)


def test_constant_stream_zero(backend):
    k = build_kernel("dog", 1.5, 30.0)
    frames = [np.full((6, 7), 173.0, dtype=np.float32)] * 80
    out = list(stream_temporal_filter(stream_from_arrays(frames), k, backend=backend))
    assert len(out) == 80 - 44
    assert max(np.abs(f.data).max() for f in out) <= 1e-6


def test_ramp_rejection_streaming(backend):
    k = build_kernel("dog", 1.5, 30.0)
    slope = 0.37
    frames = [np.full((3, 3), 10.0 + slope * n) for n in range(100)]
    out = list(stream_temporal_filter(stream_from_arrays(frames), k, np.float64, backend))
    assert max(np.abs(f.data).max() for f in out) <= 1e-6 * slope


@pytest.mark.parametrize("f", [1.5, 1.64])
def test_sinusoid_gain_matches_dtft(backend, f):
    k = build_kernel("dog", 1.5, 30.0)
    measured = measure_tone_gain(k, f, 30.0, settle_frames=0, backend=backend)
    assert measured == pytest.approx(_dtft(k.taps, f, 30.0), rel=1e-4)


def test_short_stream_empty():
    k = build_kernel("dog", 1.5, 30.0)
    frames = [np.zeros((2, 2), np.float32)] * 44
    assert list(stream_temporal_filter(stream_from_arrays(frames), k)) == []


def test_group_delay_and_indices():
    k = build_kernel("dog", 1.5, 30.0)
    frames = [np.zeros((2, 2), np.float32)] * 50
    s = stream_temporal_filter(stream_from_arrays(frames), k)
    assert s.meta["group_delay_frames"] == 22
    assert s.header.frame_count == 6
    assert [f.index for f in s] == list(range(22, 28))


@pytest.mark.parametrize("kind", ["dog", "deriv1"])
def test_streaming_equals_batch_f64(backend, rng, kind):
    k = build_kernel(kind, 1.5, 30.0)
    data = rng.normal(100, 20, size=(90, 5, 6))
    out = np.stack([f.data for f in stream_temporal_filter(
        stream_from_arrays(list(data)), k, np.float64, backend)])
    np.testing.assert_array_equal(out, convolve_valid(data, k, np.float64))
    # independent oracle: plain convolution along time
    ref = np.apply_along_axis(lambda v: np.convolve(v, k.taps, mode="valid"), 0, data)
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-10)


def test_streaming_f32_close_to_f64(backend, rng):
    k = build_kernel("dog", 1.5, 30.0)
    data = rng.uniform(0, 255, size=(80, 4, 4)).astype(np.float32)
    out = np.stack([f.data for f in stream_temporal_filter(stream_from_arrays(list(data)), k,
                                                           np.float32, backend)])
    ref = convolve_valid(data.astype(np.float64), k, np.float64)
    assert np.max(np.abs(out - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_window_rejects_wrong_shape():
    win = TemporalWindow(build_kernel("dog", 1.5, 30.0), (4, 4))
    with pytest.raises(DimensionMismatchError):
        win.push(Frame(np.zeros((3, 4)), 0))


def test_kernel_csv():
    k = build_kernel("dog", 1.5, 30.0)
    lines = k.to_csv().strip().splitlines()
    assert lines[0] == "offset,weight" and len(lines) == 46
    offs, w = zip(*(map(float, l.split(",")) for l in lines[1:]))
    np.testing.assert_array_equal(np.array(w), k.taps)
    assert offs[0] == -22 and offs[-1] == 22


def test_unknown_kind():
    with pytest.raises(ParameterError):
        build_kernel("laplace", 1.5, 30.0)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("kind", ["dog", "deriv1"])
@pytest.mark.parametrize("counts", [np.uint8, np.uint16])
def test_count_storage_matches_float_storage(backend, rng, dtype, kind, counts):
    k = build_kernel(kind, 1.5, 30.0)
    top = np.iinfo(counts).max
    raw = rng.integers(0, top + 1, size=(k.length + 6, 5, 7)).astype(counts)
    native = TemporalWindow(k, (5, 7), dtype, backend)
    widened = TemporalWindow(k, (5, 7), dtype, backend)
    for i, a in enumerate(raw):
        x = native.push(Frame(a, i))
        y = widened.push(Frame(a.astype(dtype), i))
        if x is not None:
            assert np.array_equal(x.data, y.data)
            assert x.data.dtype == dtype
    assert native._ring.dtype == counts


def test_float_frame_after_counts_switches_storage(backend, rng):
    k = build_kernel("dog", 1.5, 30.0)
    raw = rng.integers(0, 256, size=(k.length + 4, 3, 4)).astype(np.uint8)
    mixed = TemporalWindow(k, (3, 4), np.float64, backend)
    plain = TemporalWindow(k, (3, 4), np.float64, backend)
    for i, a in enumerate(raw):
        f = a.astype(np.float64) if i % 7 == 3 else a
        x = mixed.push(Frame(f, i))
        y = plain.push(Frame(a.astype(np.float64), i))
        if x is not None:
            assert np.array_equal(x.data, y.data)
    assert mixed._ring.dtype == np.float64
    mixed.reset()
    mixed.push(Frame(raw[0], 0))
    assert mixed._ring.dtype == np.uint8
