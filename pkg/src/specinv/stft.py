"""STFT analysis/synthesis with centered frames and weighted overlap-add.

Frames are centered: frame ``tau`` covers samples ``hop*tau + l`` for
``l in [-L, L-1]`` where ``L = win_len // 2``, and the DFT phase is
referenced to the frame center (``l = 0``). Out-of-range samples are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SAMPLE_RATE = 16000

# Relative magnitude floor applied before log and before ratio computation.
MAGNITUDE_FLOOR_RATIO = 1e-10

# Hop-shifted sums of squared window values below this fraction of the
# window peak count as a NOLA violation.
_NOLA_TOL = 1e-10


class ConfigError(ValueError):
    """Invalid analysis configuration or mismatched geometry."""


def hann_window(win_len: int) -> np.ndarray:
    """Periodic Hann window of even length, peak 1 at the frame center."""
    _check_win_len(win_len)
    k = np.arange(win_len)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / win_len))


def gaussian_window(win_len: int, width: float) -> np.ndarray:
    """Gaussian window exp(-pi*t^2/width) sampled at t = l/win_len.

    ``l`` runs over ``[-L, L-1]``, so index ``L`` (the frame center) is the
    peak with value 1. The time axis is normalized to window-length units,
    which makes ``width`` dimensionless.
    """
    _check_win_len(win_len)
    if not width > 0:
        raise ConfigError(f"gaussian width must be positive, got {width}")
    half = win_len // 2
    t = np.arange(-half, half) / win_len
    return np.exp(-np.pi * t * t / width)


def make_window(kind: str, win_len: int, gauss_width: float | None = None) -> np.ndarray:
    """Build the analysis window named by ``kind`` ('hann' or 'gaussian')."""
    if kind == "hann":
        return hann_window(win_len)
    if kind == "gaussian":
        if gauss_width is None:
            raise ConfigError("gaussian window requires a width")
        return gaussian_window(win_len, gauss_width)
    raise ConfigError(f"unknown window kind {kind!r}")


def _check_win_len(win_len: int) -> None:
    if win_len <= 0 or win_len % 2:
        raise ConfigError(f"win_len must be even and positive, got {win_len}")


@dataclass
class AnalysisConfig:
    """STFT geometry: window length/kind, hop and sample rate.

    Construction validates the geometry and the NOLA condition (the
    hop-shifted sum of squared window values must be bounded away from
    zero at every offset), so any config that constructs is invertible.
    """

    win_len: int = 1024
    hop: int = 256
    window_kind: str = "hann"
    gauss_width: float | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        _check_win_len(self.win_len)
        if not 0 < self.hop <= self.win_len:
            raise ConfigError(
                f"hop must be in (0, win_len], got hop={self.hop} win_len={self.win_len}"
            )
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        w2 = self.window() ** 2
        ola = np.array([w2[r :: self.hop].sum() for r in range(self.hop)])
        if ola.min() <= _NOLA_TOL * w2.max():
            raise ConfigError(
                f"NOLA violated for {self.window_kind} win={self.win_len} hop={self.hop}"
            )

    def window(self) -> np.ndarray:
        return make_window(self.window_kind, self.win_len, self.gauss_width)

    @property
    def half_bins(self) -> int:
        """L: number of one-sided bins minus one (win_len // 2)."""
        return self.win_len // 2

    @property
    def n_bins(self) -> int:
        return self.win_len // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        if n_samples <= 0:
            raise ConfigError("waveform must be non-empty")
        return 1 + (n_samples - 1) // self.hop


@dataclass
class Waveform:
    """Mono waveform: float64 samples plus sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class ComplexSpectrogram:
    """One-sided complex STFT, shape (L+1, T)."""

    data: np.ndarray
    config: AnalysisConfig

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != self.config.n_bins:
            raise ConfigError(
                f"bin count {self.data.shape[0]} does not match win_len {self.config.win_len}"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.data)

    def phases(self) -> np.ndarray:
        return np.angle(self.data)


@dataclass
class LogMagnitudeSpectrogram:
    """Natural-log magnitudes, floored, shape (L+1, T)."""

    data: np.ndarray
    config: AnalysisConfig

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.config.n_bins:
            raise ConfigError(f"bad log-magnitude shape {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def magnitudes(self) -> np.ndarray:
        return np.exp(self.data)


def _center_signs(n_bins: int) -> np.ndarray:
    # (-1)^omega implements the l -> l - L index shift of the centered DFT.
    s = np.ones(n_bins)
    s[1::2] = -1.0
    return s


def stft(wave: Waveform, cfg: AnalysisConfig) -> ComplexSpectrogram:
    """Centered-frame one-sided STFT.

    Frame ``tau`` analyzes samples ``hop*tau + l``, ``l in [-L, L-1]``,
    windowed and transformed with a size-2L real DFT whose phase is
    referenced to ``l = 0``.
    """
    n = len(wave)
    if n == 0:
        raise ValueError("waveform must be non-empty")
    hop, win = cfg.hop, cfg.win_len
    half = cfg.half_bins
    t_frames = cfg.frame_count(n)
    total = half + max(n, (t_frames - 1) * hop + half)
    padded = np.zeros(total)
    padded[half : half + n] = wave.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[::hop][:t_frames]
    spec = np.fft.rfft(frames * cfg.window(), axis=1).T
    spec *= _center_signs(cfg.n_bins)[:, None]
    return ComplexSpectrogram(spec, cfg)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse with window-squared normalization.

    Exact (to rounding) wherever the accumulated squared window is healthy;
    for consistent spectrograms that is every covered sample. Default
    output length is ``hop * T``.
    """
    cfg = spec.config
    hop, win, half = cfg.hop, cfg.win_len, cfg.half_bins
    t_frames = spec.n_frames
    if length is None:
        length = hop * t_frames
    window = cfg.window()
    signs = _center_signs(cfg.n_bins)
    frames = np.fft.irfft(spec.data.T * signs[None, :], n=win, axis=1) * window
    w2 = window**2
    buf = np.zeros((t_frames - 1) * hop + win)
    wsum = np.zeros_like(buf)
    for tau in range(t_frames):
        start = tau * hop
        buf[start : start + win] += frames[tau]
        wsum[start : start + win] += w2
    thr = _NOLA_TOL * wsum.max()
    out = np.where(wsum > thr, buf / np.where(wsum > thr, wsum, 1.0), 0.0)
    out = out[half:]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return Waveform(out[:length], cfg.sample_rate)


def log_magnitude(spec: ComplexSpectrogram) -> LogMagnitudeSpectrogram:
    """ln(max(|Y|, floor)) with floor = 1e-10 * max|Y| (absolute 1e-10 on silence)."""
    mag = np.abs(spec.data)
    peak = mag.max()
    floor = MAGNITUDE_FLOOR_RATIO * peak if peak > 0 else MAGNITUDE_FLOOR_RATIO
    return LogMagnitudeSpectrogram(np.log(np.maximum(mag, floor)), spec.config)
