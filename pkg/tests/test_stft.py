"""STFT analysis/synthesis, windows, log-magnitudes and WAV I/O."""

import numpy as np
import pytest

from specinv import (
    AnalysisConfig,
    ComplexSpectrogram,
    ConfigError,
    Waveform,
    istft,
    log_magnitude,
    make_window,
    stft,
)
from specinv.stft import gaussian_window, hann_window
from specinv.wav import AudioFormatError, read_wav, write_wav
from conftest import am_chirp, noise, tone


def naive_centered_dft(samples, window, hop, tau):
    """O(N^2) oracle: the centered-frame one-sided DFT, straight from the sum."""
    win = window.size
    half = win // 2
    n_bins = half + 1
    out = np.zeros(n_bins, dtype=complex)
    for w in range(n_bins):
        acc = 0.0 + 0.0j
        for offset in range(-half, half):
            idx = hop * tau + offset
            if 0 <= idx < samples.size:
                acc += (
                    samples[idx]
                    * window[offset + half]
                    * np.exp(-2j * np.pi * w * offset / win)
                )
        out[w] = acc
    return out


class TestWindows:
    def test_hann4_closed_form(self):
        assert np.allclose(make_window("hann", 4), [0.0, 0.5, 1.0, 0.5])

    def test_gaussian_limit_all_ones(self):
        w = make_window("gaussian", 16, gauss_width=1e12)
        assert np.allclose(w, 1.0, atol=1e-9)

    def test_gaussian_symmetric_peak(self):
        w = gaussian_window(64, 0.01)
        assert w[32] == 1.0
        for j in range(1, 32):
            assert w[32 + j] == pytest.approx(w[32 - j], rel=1e-12)
        # closed form spot check at l = 8
        assert w[40] == pytest.approx(np.exp(-np.pi * (8 / 64) ** 2 / 0.01), rel=1e-12)

    def test_hann_rejects_odd_length(self):
        with pytest.raises(ConfigError):
            hann_window(5)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            make_window("hamming", 8)


class TestConfig:
    def test_nola_rejects_hop_equal_win_hann(self):
        # periodic Hann is zero at the frame edge, so hop == win violates NOLA
        with pytest.raises(ConfigError):
            AnalysisConfig(win_len=8, hop=8)

    def test_gaussian_wide_allows_hop_equal_win(self):
        AnalysisConfig(win_len=8, hop=8, window_kind="gaussian", gauss_width=0.5)

    def test_gaussian_narrow_hop_equal_win_rejected(self):
        # edge values of a very narrow gaussian underflow the NOLA floor
        with pytest.raises(ConfigError):
            AnalysisConfig(win_len=64, hop=64, window_kind="gaussian", gauss_width=0.005)

    def test_bad_hop(self):
        with pytest.raises(ConfigError):
            AnalysisConfig(win_len=8, hop=0)
        with pytest.raises(ConfigError):
            AnalysisConfig(win_len=8, hop=9)


class TestStft:
    def test_impulse_flat_magnitude(self):
        cfg = AnalysisConfig(8, 4)
        x = np.zeros(8)
        x[0] = 1.0
        spec = stft(Waveform(x), cfg)
        # window center value (the l=0 sample) sets every bin's magnitude
        center = cfg.window()[4]
        assert np.allclose(np.abs(spec.data[:, 0]), center)

    def test_all_zero_waveform(self):
        cfg = AnalysisConfig(16, 4)
        spec = stft(Waveform(np.zeros(64)), cfg)
        assert np.all(spec.data == 0)

    def test_empty_waveform_rejected(self):
        cfg = AnalysisConfig(16, 4)
        with pytest.raises(ValueError):
            stft(Waveform(np.zeros(0)), cfg)

    def test_matches_naive_dft_oracle(self):
        cfg = AnalysisConfig(64, 16)
        x = noise(400, seed=3)
        spec = stft(Waveform(x), cfg)
        window = cfg.window()
        for tau in (0, 3, 7):
            expected = naive_centered_dft(x, window, cfg.hop, tau)
            np.testing.assert_allclose(spec.data[:, tau], expected, atol=1e-10)

    def test_cosine_peaks_at_matching_bin(self):
        cfg = AnalysisConfig(1024, 256)
        # bin-centered frequency: bin 64 <-> 64 * sr / 1024 = 1000 Hz
        x = tone(1000.0, 6000)
        spec = stft(Waveform(x), cfg)
        mags = spec.magnitudes()
        for tau in range(4, spec.n_frames - 4):
            assert np.argmax(mags[:, tau]) == 64

    def test_linearity(self):
        cfg = AnalysisConfig(64, 16)
        x, y = noise(500, seed=1), noise(500, seed=2)
        sx = stft(Waveform(x), cfg).data
        sy = stft(Waveform(y), cfg).data
        sboth = stft(Waveform(2.0 * x - 0.5 * y), cfg).data
        np.testing.assert_allclose(sboth, 2.0 * sx - 0.5 * sy, atol=1e-12)

    def test_parseval_per_frame(self):
        cfg = AnalysisConfig(64, 64 // 4)
        x = noise(600, seed=5)
        spec = stft(Waveform(x), cfg)
        window = cfg.window()
        half = cfg.half_bins
        for tau in (2, 5):
            frame = np.zeros(cfg.win_len)
            for offset in range(-half, half):
                idx = cfg.hop * tau + offset
                if 0 <= idx < x.size:
                    frame[offset + half] = x[idx] * window[offset + half]
            col = spec.data[:, tau]
            two_sided = (
                np.abs(col[0]) ** 2
                + np.abs(col[-1]) ** 2
                + 2.0 * np.sum(np.abs(col[1:-1]) ** 2)
            )
            assert two_sided == pytest.approx(cfg.win_len * np.sum(frame**2), rel=1e-10)

    def test_bin_count_invariant(self):
        cfg = AnalysisConfig(32, 8)
        spec = stft(Waveform(noise(100)), cfg)
        assert spec.data.shape[0] == 17
        with pytest.raises(ConfigError):
            ComplexSpectrogram(np.zeros((16, 4), dtype=complex), cfg)


class TestIstft:
    @pytest.mark.parametrize(
        "cfg,signal",
        [
            (AnalysisConfig(1024, 256), noise(8000, seed=11)),
            (AnalysisConfig(64, 16), am_chirp(4000)),
            (AnalysisConfig(1024, 256), tone(440.0, 8000)),
        ],
    )
    def test_roundtrip_interior(self, cfg, signal):
        rec = istft(stft(Waveform(signal), cfg), length=signal.size)
        win = cfg.win_len
        err = np.abs(rec.samples[win:-win] - signal[win:-win]).max()
        assert err < 1e-6 * np.abs(signal).max()

    def test_zero_spectrogram(self):
        cfg = AnalysisConfig(16, 4)
        spec = ComplexSpectrogram(np.zeros((9, 5), dtype=complex), cfg)
        assert np.all(istft(spec).samples == 0)

    def test_full_reconstruction_with_fine_hop(self):
        # every sample is covered by the window peak region, so even edges match
        cfg = AnalysisConfig(64, 8)
        x = noise(1000, seed=4)
        rec = istft(stft(Waveform(x), cfg), length=x.size)
        assert np.abs(rec.samples - x).max() < 1e-10


class TestLogMagnitude:
    def test_unit_magnitude_is_zero(self):
        cfg = AnalysisConfig(4, 2)
        spec = ComplexSpectrogram(np.ones((3, 2), dtype=complex), cfg)
        assert np.all(log_magnitude(spec).data == 0.0)

    def test_floor_relative_to_peak(self):
        cfg = AnalysisConfig(4, 2)
        data = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]], dtype=complex)
        lm = log_magnitude(ComplexSpectrogram(data, cfg))
        assert lm.data[0, 0] == 0.0
        assert lm.data[1, 1] == pytest.approx(np.log(1e-10))

    def test_matches_elementwise_oracle(self):
        cfg = AnalysisConfig(8, 4)
        rng = np.random.default_rng(0)
        data = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
        lm = log_magnitude(ComplexSpectrogram(data, cfg))
        floor = 1e-10 * np.abs(data).max()
        for i in range(5):
            for j in range(7):
                expected = np.log(max(abs(data[i, j]), floor))
                assert lm.data[i, j] == pytest.approx(expected, rel=1e-14)

    def test_silence_is_finite(self):
        cfg = AnalysisConfig(8, 4)
        lm = log_magnitude(ComplexSpectrogram(np.zeros((5, 3), dtype=complex), cfg))
        assert np.all(np.isfinite(lm.data))


class TestWav:
    def test_pcm16_roundtrip(self, tmp_path):
        w = Waveform(tone(500.0, 2000), 16000)
        path = tmp_path / "t.wav"
        write_wav(path, w, fmt="pcm16")
        back = read_wav(path)
        assert back.sample_rate == 16000
        assert np.abs(back.samples - w.samples).max() < 1.0 / 32768

    def test_float32_roundtrip(self, tmp_path):
        w = Waveform(noise(1500, seed=8), 16000)
        path = tmp_path / "t.wav"
        write_wav(path, w, fmt="float32")
        back = read_wav(path)
        assert np.abs(back.samples - w.samples).max() < 1e-7

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "stereo.wav"
        wavfile.write(path, 16000, np.zeros((100, 2), dtype=np.int16))
        with pytest.raises(AudioFormatError, match="mono"):
            read_wav(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "i32.wav"
        wavfile.write(path, 16000, np.zeros(100, dtype=np.int32))
        with pytest.raises(AudioFormatError):
            read_wav(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a wav at all")
        with pytest.raises(AudioFormatError):
            read_wav(path)
