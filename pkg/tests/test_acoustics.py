import math

import numpy as np
import pytest

from refsep import _imgsrc_py
from refsep.acoustics import (
    SPEED_OF_SOUND,
    SceneRanges,
    SceneSpec,
    convolve,
    direct_delay_samples,
    estimate_t60,
    generate_rir,
    sample_scene,
)
from refsep.audio import AudioBuffer
from refsep.errors import InvalidSceneError, SceneSamplingError, T60EstimationError

try:
    from refsep import _imgsrc as _imgsrc_c
except ImportError:
    _imgsrc_c = None

FS = 8000


def box_scene(t60=0.4, src=(3.9, 3.1, 1.5)):
    return SceneSpec((6.0, 5.0, 2.8), t60, (3.0, 2.5, 1.5), (src,))


class TestSceneSampling:
    def test_same_seed_same_scene(self):
        a = sample_scene(np.random.default_rng(3), n_sources=2)
        b = sample_scene(np.random.default_rng(3), n_sources=2)
        assert a == b

    def test_default_ranges_respected(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = sample_scene(rng, n_sources=2)
            lx, ly, lz = s.room_dims
            assert 4 <= lx <= 8 and 4 <= ly <= 8 and 2.5 <= lz <= 3
            assert 0.16 <= s.t60 <= 2.0
            assert abs(s.mic_pos[0] - lx / 2) <= 0.5
            assert s.mic_pos[2] == 1.5
            for p in s.source_pos:
                d = math.dist(p, s.mic_pos)
                assert 0.5 - 1e-9 <= d <= 1.5 + 1e-9
                assert p[2] == s.mic_pos[2]

    def test_point_ranges_pin_the_scene(self):
        ranges = SceneRanges(
            room_x=(6.0, 6.0),
            room_y=(6.0, 6.0),
            room_z=(2.75, 2.75),
            t60=(0.3, 0.3),
            mic_offset=(0.0, 0.0),
            source_angle=(0.0, 0.0),
            source_distance_offset=(0.0, 0.0),
        )
        s = sample_scene(np.random.default_rng(1), ranges, n_sources=1)
        assert s.room_dims == (6.0, 6.0, 2.75)
        assert s.mic_pos == (3.0, 3.0, 1.5)
        # angle 0 deg points along +x
        np.testing.assert_allclose(s.source_pos[0], (4.0, 3.0, 1.5), atol=1e-12)

    def test_unplaceable_source_raises(self):
        ranges = SceneRanges(
            room_x=(4.0, 4.0),
            room_y=(4.0, 4.0),
            source_distance_offset=(9.0, 9.0),  # 10 m from the mic, room is 4 m
        )
        with pytest.raises(SceneSamplingError):
            sample_scene(np.random.default_rng(0), ranges, n_sources=1)

    def test_scene_validation(self):
        with pytest.raises(InvalidSceneError):
            SceneSpec((6, 5, 2.8), 0.4, (3, 2.5, 1.5), ((7.0, 2.5, 1.5),))
        with pytest.raises(InvalidSceneError):
            SceneSpec((6, 5, 2.8), -0.1, (3, 2.5, 1.5), ((3.9, 2.5, 1.5),))

    def test_scene_dict_roundtrip(self):
        s = sample_scene(np.random.default_rng(5), n_sources=2)
        assert SceneSpec.from_dict(s.to_dict()) == s


class TestTapKernel:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        delays = rng.uniform(5, 400, 60)
        amps = rng.uniform(-1, 1, 60)
        n = 500
        got = _imgsrc_py.accumulate_taps(delays, amps, n)
        # independent per-image, per-tap loop
        want = np.zeros(n)
        for d, a in zip(delays, amps):
            for tap in range(max(0, math.ceil(d - 40)), min(n - 1, math.floor(d + 40)) + 1):
                t = tap - d
                want[tap] += a * 0.5 * (1 + math.cos(math.pi * t / 40)) * np.sinc(0.9 * t)
        np.testing.assert_allclose(got, want, atol=1e-12)

    @pytest.mark.skipif(_imgsrc_c is None, reason="compiled kernel not built")
    def test_compiled_matches_python(self):
        rng = np.random.default_rng(1)
        delays = rng.uniform(0, 3000, 20000)
        amps = rng.standard_normal(20000) / (1 + delays)
        a = _imgsrc_c.accumulate_taps(delays, amps, 3200)
        b = _imgsrc_py.accumulate_taps(delays, amps, 3200)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_taps_clipped_to_range(self):
        out = _imgsrc_py.accumulate_taps(np.array([2.0]), np.array([1.0]), 30)
        assert out.shape == (30,)
        assert np.isfinite(out).all()


class TestGenerateRir:
    def test_anechoic_single_tap(self):
        scene = box_scene(src=(4.0, 2.5, 1.5))  # exactly 1 m away
        rir = generate_rir(scene, 0, FS, reflections=False)
        tap = round(1.0 / SPEED_OF_SOUND * FS)
        assert np.flatnonzero(rir.samples).tolist() == [tap]
        assert rir.samples[tap] == pytest.approx(1 / (4 * math.pi), rel=1e-12)

    def test_anechoic_inverse_distance_law(self):
        near = generate_rir(box_scene(src=(3.5, 2.5, 1.5)), 0, FS, reflections=False)
        far = generate_rir(box_scene(src=(4.0, 2.5, 1.5)), 0, FS, reflections=False)
        assert near.samples.max() == pytest.approx(2 * far.samples.max(), rel=1e-12)

    def test_zero_t60_means_anechoic(self):
        rir = generate_rir(box_scene(t60=0.0), 0, FS)
        assert np.count_nonzero(rir.samples) == 1

    def test_infeasible_t60_raises(self):
        with pytest.raises(InvalidSceneError):
            generate_rir(box_scene(t60=0.05), 0, FS)

    def test_reverberant_t60_and_peak(self):
        for t60 in (0.3, 0.5):
            scene = box_scene(t60=t60)
            rir = generate_rir(scene, 0, FS)
            assert len(rir) >= int(t60 * FS)
            assert np.all(np.isfinite(rir.samples))
            est = estimate_t60(rir)
            assert abs(est - t60) / t60 < 0.2
            peak = int(np.argmax(np.abs(rir.samples)))
            assert abs(peak - direct_delay_samples(scene, 0, FS)) <= 1

    def test_deterministic(self):
        scene = box_scene()
        a = generate_rir(scene, 0, FS)
        b = generate_rir(scene, 0, FS)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_bad_source_index(self):
        with pytest.raises(ValueError):
            generate_rir(box_scene(), 3, FS)


class TestConvolve:
    def test_unit_impulse_identity(self):
        rng = np.random.default_rng(2)
        x = AudioBuffer(rng.standard_normal(500), FS)
        rir = AudioBuffer(np.array([1.0]), FS)
        np.testing.assert_allclose(convolve(x, rir).samples, x.samples, atol=1e-12)

    def test_delayed_impulse_shifts(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(200)
        h = np.zeros(10)
        h[7] = 1.0
        out = convolve(AudioBuffer(x, FS), AudioBuffer(h, FS)).samples
        np.testing.assert_allclose(out[7:], x[:-7], atol=1e-12)
        np.testing.assert_allclose(out[:7], 0, atol=1e-12)

    def test_matches_bruteforce_sum(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(64)
        h = rng.standard_normal(17)
        out = convolve(AudioBuffer(x, FS), AudioBuffer(h, FS)).samples
        want = np.zeros(64)
        for n in range(64):
            want[n] = sum(x[n - k] * h[k] for k in range(17) if 0 <= n - k < 64)
        np.testing.assert_allclose(out, want, atol=1e-10)

    def test_output_length_matches_input(self):
        x = AudioBuffer(np.ones(100), FS)
        h = AudioBuffer(np.ones(50), FS)
        assert len(convolve(x, h)) == 100

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            convolve(AudioBuffer(np.ones(10), 8000), AudioBuffer(np.ones(5), 16000))

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = np.zeros(300)
        x[:200] = rng.standard_normal(200)
        h = rng.standard_normal(30)
        d = 40
        shifted = np.roll(x, d)
        shifted[:d] = 0
        a = convolve(AudioBuffer(shifted, FS), AudioBuffer(h, FS)).samples
        b = convolve(AudioBuffer(x, FS), AudioBuffer(h, FS)).samples
        np.testing.assert_allclose(a[d:], b[:-d], atol=1e-12)


class TestEstimateT60:
    def test_known_exponential(self):
        for t60 in (0.25, 0.6):
            n = int(2.5 * t60 * FS)
            h = 10.0 ** (-3.0 * np.arange(n) / (FS * t60))
            est = estimate_t60(AudioBuffer(h, FS))
            assert abs(est - t60) / t60 < 0.05

    def test_scale_invariant(self):
        n = int(1.0 * FS)
        h = 10.0 ** (-3.0 * np.arange(n) / (FS * 0.4))
        a = estimate_t60(AudioBuffer(h, FS))
        b = estimate_t60(AudioBuffer(10 * h, FS))
        assert a == pytest.approx(b, rel=1e-12)

    def test_pure_impulse_fails(self):
        h = np.zeros(1000)
        h[3] = 1.0
        with pytest.raises(T60EstimationError):
            estimate_t60(AudioBuffer(h, FS))

    def test_silence_fails(self):
        with pytest.raises(T60EstimationError):
            estimate_t60(AudioBuffer(np.zeros(100), FS))
