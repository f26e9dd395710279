import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refsep.audio import AudioBuffer
from refsep.dsp import (
    ComplexSpectrogram,
    StftConfig,
    combine_mag_phase,
    crop_frames,
    istft,
    log_spectrum,
    pad_frames,
    ri_pack,
    ri_unpack,
    stft,
)
from util import bandlimited_noise, si_sdr_oracle

CFG = StftConfig()


class TestConfig:
    def test_defaults(self):
        assert (CFG.frame_size, CFG.hop, CFG.keep_bins) == (256, 64, 128)
        assert CFG.front_pad == 192

    def test_window_matches_formula(self):
        n = np.arange(256)
        expected = 0.5 - 0.5 * np.cos(2 * np.pi * n / 256)
        np.testing.assert_allclose(CFG.window_values, expected, atol=1e-15)
        assert CFG.window_values[0] == 0.0
        assert CFG.window_values[128] == 1.0

    def test_squared_window_overlap_is_constant(self):
        # Direct oracle: accumulate w^2 at every hop offset over a long grid
        # and check the interior is flat at sum(w^2)/hop.
        w = CFG.window_values
        grid = np.zeros(256 * 10)
        for start in range(0, len(grid) - 256, 64):
            grid[start : start + 256] += w * w
        interior = grid[256:-512]
        assert np.ptp(interior) < 1e-12
        assert interior[0] == pytest.approx(np.sum(w * w) / 64)
        assert CFG.overlap_gain == pytest.approx(1.5)

    def test_rejects_non_dividing_hop(self):
        with pytest.raises(ValueError):
            StftConfig(frame_size=256, hop=48)

    def test_rejects_bad_keep_bins(self):
        with pytest.raises(ValueError):
            StftConfig(keep_bins=0)
        with pytest.raises(ValueError):
            StftConfig(keep_bins=130)

    def test_rejects_non_cola_hop(self):
        # Hann squared does not overlap-add to a constant at 50% overlap.
        with pytest.raises(ValueError):
            StftConfig(frame_size=256, hop=128)

    def test_frame_count_formula(self):
        assert CFG.frame_count(32000) == 503
        assert CFG.frame_count(1) == 4
        for t in [1, 63, 64, 65, 255, 256, 1000, 8192]:
            # oracle: smallest L whose padded span covers front pad + signal
            # with a full tail margin
            l = 1
            while (l - 1) * CFG.hop + CFG.frame_size < CFG.front_pad + t + CFG.front_pad:
                l += 1
            assert CFG.frame_count(t) == l, t


class TestStft:
    def test_zero_input(self):
        spec = stft(AudioBuffer(np.zeros(1000), 8000), CFG)
        assert spec.data.shape == (128, CFG.frame_count(1000))
        assert np.all(spec.data == 0)
        assert spec.original_length == 1000

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            stft(AudioBuffer(np.zeros(0), 8000), CFG)

    def test_interior_frame_matches_direct_dft(self):
        # Oracle: windowed DFT of the frame computed without the stft helper.
        rng = np.random.default_rng(1)
        x = rng.standard_normal(4000)
        spec = stft(AudioBuffer(x, 8000), CFG)
        padded = np.zeros((spec.n_frames - 1) * 64 + 256)
        padded[192 : 192 + 4000] = x
        for m in (0, 7, 20, spec.n_frames - 1):
            frame = padded[m * 64 : m * 64 + 256]
            direct = np.fft.rfft(frame * CFG.window_values)[:128]
            np.testing.assert_allclose(spec.data[:, m], direct, atol=1e-12)

    def test_bin16_tone_energy_concentrates(self):
        # 500 Hz at 8 kHz sits exactly on bin 16 of a 256-point frame. The
        # Hann window spreads a grid tone over bins k-1..k+1 (weights
        # -1/4, 1/2, -1/4), so bin 16 dominates and the 3-bin neighborhood
        # holds all the energy for interior frames.
        t = np.arange(8000)
        x = np.cos(2 * np.pi * 500 * t / 8000)
        spec = stft(AudioBuffer(x, 8000), CFG)
        energy = np.abs(spec.data) ** 2
        for m in range(10, spec.n_frames - 10):
            col = energy[:, m]
            assert int(np.argmax(col)) == 16
            assert col[15:18].sum() / col.sum() > 0.999
            # single-bin share of a Hann-windowed grid tone is 4/6
            assert col[16] / col.sum() == pytest.approx(2 / 3, abs=1e-6)

    @given(
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(1500)
        y = rng.standard_normal(1500)
        lhs = stft(AudioBuffer(a * x + b * y, 8000), CFG).data
        rhs = a * stft(AudioBuffer(x, 8000), CFG).data + b * stft(AudioBuffer(y, 8000), CFG).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestIstft:
    def test_zero_spectrogram(self):
        spec = ComplexSpectrogram(np.zeros((128, 50), dtype=complex), CFG, 1000)
        out = istft(spec)
        assert len(out) == 1000
        assert np.all(out.samples == 0)

    def test_roundtrip_on_bandlimited_noise(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(6000, 40000))
            x = bandlimited_noise(rng, n)
            y = istft(stft(AudioBuffer(x, 8000), CFG)).samples
            assert y.size == n
            err = np.linalg.norm(y - x) / np.linalg.norm(x)
            assert err < 1e-6

    def test_roundtrip_exact_in_interior(self):
        # A tone on the analysis grid is reconstructed to machine precision
        # away from the onset/offset transients.
        t = np.arange(4096)
        x = np.cos(2 * np.pi * 60 * t / 256 + 0.37)
        y = istft(stft(AudioBuffer(x, 8000), CFG)).samples
        np.testing.assert_allclose(y[512:-512], x[512:-512], atol=1e-12)

    def test_nyquist_component_attenuated(self):
        # keep_bins=128 drops the Nyquist bin; least-squares overlap-add then
        # returns exactly 1/3 of a Nyquist-rate alternation in the interior.
        t = np.arange(8192)
        x = np.cos(np.pi * t)
        y = istft(stft(AudioBuffer(x, 8000), CFG)).samples
        np.testing.assert_allclose(y[1024:-1024], x[1024:-1024] / 3, atol=1e-9)
        assert np.sum(y**2) / np.sum(x**2) < 0.2

    def test_rejects_overlong_length(self):
        spec = stft(AudioBuffer(np.zeros(1000), 8000), CFG)
        max_len = (spec.n_frames - 1) * 64 + 256 - 192
        istft(spec, length=max_len)  # boundary is fine
        with pytest.raises(ValueError):
            istft(spec, length=max_len + 1)

    def test_shorter_length_truncates(self):
        rng = np.random.default_rng(3)
        x = bandlimited_noise(rng, 9000)
        spec = stft(AudioBuffer(x, 8000), CFG)
        y = istft(spec, length=8000).samples
        np.testing.assert_allclose(y, x[:8000], atol=1e-5)

    def test_sample_rate_passthrough(self):
        spec = stft(AudioBuffer(np.zeros(1000), 8000), CFG)
        assert istft(spec, sample_rate=16000).sample_rate == 16000


class TestRiOps:
    def test_pack_definition(self):
        data = np.zeros((128, 4), dtype=complex)
        data[5, 2] = 3 + 4j
        t = ri_pack(ComplexSpectrogram(data, CFG, 100))
        assert t.data.shape == (2, 128, 4)
        assert t.data[0, 5, 2] == 3.0
        assert t.data[1, 5, 2] == 4.0

    @given(seed=st.integers(0, 2**16))
    @settings(max_examples=20, deadline=None)
    def test_pack_unpack_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((128, 7)) + 1j * rng.standard_normal((128, 7))
        spec = ComplexSpectrogram(data, CFG, 400)
        back = ri_unpack(ri_pack(spec))
        np.testing.assert_array_equal(back.data, data)
        assert back.original_length == 400

    def test_zero_spec_zero_tensor(self):
        t = ri_pack(ComplexSpectrogram(np.zeros((128, 3), dtype=complex), CFG, 10))
        assert np.all(t.data == 0)


class TestLogSpectrum:
    def test_unit_magnitude_is_zero(self):
        spec = ComplexSpectrogram(np.ones((128, 2), dtype=complex), CFG, 10)
        np.testing.assert_array_equal(log_spectrum(spec), 0.0)

    def test_zero_hits_floor(self):
        spec = ComplexSpectrogram(np.zeros((128, 2), dtype=complex), CFG, 10)
        out = log_spectrum(spec, floor_db=-80.0)
        np.testing.assert_allclose(out, np.log(1e-4))

    def test_three_four_five(self):
        data = np.full((128, 1), 3 + 4j)
        out = log_spectrum(ComplexSpectrogram(data, CFG, 10))
        np.testing.assert_allclose(out, np.log(5.0))

    def test_rejects_nonnegative_floor(self):
        spec = ComplexSpectrogram(np.ones((128, 1), dtype=complex), CFG, 10)
        with pytest.raises(ValueError):
            log_spectrum(spec, floor_db=0.0)


class TestCombineMagPhase:
    def test_self_reconstruction(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((128, 6)) + 1j * rng.standard_normal((128, 6))
        spec = ComplexSpectrogram(data, CFG, 300)
        out = combine_mag_phase(np.abs(data), spec)
        np.testing.assert_allclose(out.data, data, atol=1e-12)

    def test_zero_magnitude(self):
        data = np.ones((128, 2), dtype=complex)
        out = combine_mag_phase(np.zeros((128, 2)), ComplexSpectrogram(data, CFG, 10))
        np.testing.assert_array_equal(out.data, 0)

    def test_zero_phase_entry_maps_to_zero(self):
        data = np.ones((128, 2), dtype=complex)
        data[3, 1] = 0
        out = combine_mag_phase(np.full((128, 2), 2.0), ComplexSpectrogram(data, CFG, 10))
        assert out.data[3, 1] == 0
        assert out.data[0, 0] == 2.0

    def test_shape_mismatch(self):
        spec = ComplexSpectrogram(np.ones((128, 2), dtype=complex), CFG, 10)
        with pytest.raises(ValueError):
            combine_mag_phase(np.ones((128, 3)), spec)

    def test_oracle_magnitude_with_mixture_phase(self):
        # Using the target's magnitude with the mixture's phase must beat the
        # mixture itself but stay short of perfect reconstruction.
        rng = np.random.default_rng(7)
        s = bandlimited_noise(rng, 12000, max_bin=40)
        other = bandlimited_noise(rng, 12000, max_bin=90)
        mix = AudioBuffer(s + other, 8000)
        mix_spec = stft(mix, CFG)
        target_spec = stft(AudioBuffer(s, 8000), CFG)
        est = istft(combine_mag_phase(target_spec.magnitude(), mix_spec)).samples
        score = si_sdr_oracle(est, s)
        assert si_sdr_oracle(mix.samples, s) < score < 99.0


class TestPadFrames:
    def test_pad_to_multiple(self):
        t = ri_pack(stft(AudioBuffer(np.ones(4000), 8000), CFG))
        padded, crop = pad_frames(t, 128)
        assert crop == t.n_frames
        assert padded.n_frames == 128
        assert np.all(padded.data[:, :, crop:] == 0)

    def test_already_multiple_is_noop(self):
        from refsep.dsp import RiTensor

        t = RiTensor(np.zeros((2, 128, 128)), CFG, 8000)
        padded, crop = pad_frames(t, 128)
        assert padded is t
        assert crop == 128

    def test_pad_then_crop_roundtrip(self):
        rng = np.random.default_rng(11)
        x = bandlimited_noise(rng, 7000)
        t = ri_pack(stft(AudioBuffer(x, 8000), CFG))
        padded, crop = pad_frames(t, 128)
        back = crop_frames(padded, crop)
        np.testing.assert_array_equal(back.data, t.data)

    def test_crop_rejects_overlong(self):
        from refsep.dsp import RiTensor

        t = RiTensor(np.zeros((2, 128, 10)), CFG, 100)
        with pytest.raises(ValueError):
            crop_frames(t, 11)
