"""Wrapped phase-derivative features (FPD/TPD/BPD) and complex ratios.

FPD is the wrapped phase difference between adjacent frequency bins within
a frame (length L); TPD is the wrapped difference between consecutive
frames (length L+1); BPD is TPD with the linear term hop*pi*omega/L
removed, which centers values near zero for slowly varying content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import AnalysisConfig, ComplexSpectrogram, ConfigError, Waveform
from .stft import log_magnitude, stft

_TWO_PI = 2.0 * np.pi


def wrap(x):
    """Wrap angles into [-pi, pi); wrap(pi) == -pi."""
    out = np.mod(np.asarray(x, dtype=np.float64) + np.pi, _TWO_PI) - np.pi
    # fmod rounding can land exactly on +pi for inputs just below a period
    out = np.where(out >= np.pi, out - _TWO_PI, out)
    if np.ndim(x) == 0:
        return float(out)
    return out


def fpd(phases: np.ndarray, frame: int) -> np.ndarray:
    """Frequency phase difference of one frame: wrap(diff along bins), length L."""
    n_frames = phases.shape[1]
    if not 0 <= frame < n_frames:
        raise IndexError(f"frame {frame} out of range [0, {n_frames})")
    return wrap(np.diff(phases[:, frame]))


def tpd(phases: np.ndarray, frame: int) -> np.ndarray:
    """Time phase difference between frames ``frame`` and ``frame-1``, length L+1."""
    n_frames = phases.shape[1]
    if frame < 1:
        raise IndexError("TPD requires frame >= 1")
    if frame >= n_frames:
        raise IndexError(f"frame {frame} out of range [0, {n_frames})")
    return wrap(phases[:, frame] - phases[:, frame - 1])


def _ramp(n_bins: int, hop: int) -> np.ndarray:
    # hop * pi * omega / L, evaluated exactly in double precision
    half = n_bins - 1
    return hop * np.pi * np.arange(n_bins) / half


def bpd_from_tpd(tpd_vec: np.ndarray, hop: int) -> np.ndarray:
    """Remove the linear phase advance: wrap(v - hop*pi*omega/L)."""
    v = np.asarray(tpd_vec, dtype=np.float64)
    return wrap(v - _ramp(v.size, hop))


def tpd_from_bpd(bpd_vec: np.ndarray, hop: int) -> np.ndarray:
    """Inverse of bpd_from_tpd up to wrapping: wrap(w + hop*pi*omega/L)."""
    w = np.asarray(bpd_vec, dtype=np.float64)
    return wrap(w + _ramp(w.size, hop))


@dataclass
class ComplexRatios:
    """Per-bin complex factors relating a frame to its neighbors.

    ``u_ratio[l]`` relates bin l+1 to bin l within the current frame;
    ``v_ratio[l]`` relates the current frame to the previous one at bin l.
    """

    u_ratio: np.ndarray
    v_ratio: np.ndarray

    def __post_init__(self):
        self.u_ratio = np.asarray(self.u_ratio, dtype=np.complex128)
        self.v_ratio = np.asarray(self.v_ratio, dtype=np.complex128)
        if self.u_ratio.size + 1 != self.v_ratio.size:
            raise ValueError(
                f"u_ratio must be one shorter than v_ratio, got "
                f"{self.u_ratio.size} and {self.v_ratio.size}"
            )


def complex_ratios(
    mag_prev: np.ndarray,
    mag_cur: np.ndarray,
    fpd_vec: np.ndarray,
    tpd_vec: np.ndarray,
) -> ComplexRatios:
    """Polar ratios: magnitudes from the spectrogram, arguments from FPD/TPD."""
    mag_prev = np.asarray(mag_prev, dtype=np.float64)
    mag_cur = np.asarray(mag_cur, dtype=np.float64)
    n = mag_cur.size
    if mag_prev.size != n or np.size(tpd_vec) != n or np.size(fpd_vec) != n - 1:
        raise ValueError("length mismatch in complex_ratios inputs")
    if mag_prev.min() <= 0 or mag_cur.min() <= 0:
        raise ValueError("magnitudes must be floored positive")
    u = (mag_cur[1:] / mag_cur[:-1]) * np.exp(1j * np.asarray(fpd_vec))
    v = (mag_cur / mag_prev) * np.exp(1j * np.asarray(tpd_vec))
    return ComplexRatios(u, v)


def gradient_theorem_residual(
    wave: Waveform, cfg: AnalysisConfig, mask_ratio: float = 1e-3
) -> tuple[float, float]:
    """Median residuals of the Gaussian-window log-magnitude/phase relations.

    Uses central differences on the discrete grid (frequency step = one bin,
    time step = hop/win_len in window-length units) and compares the phase
    derivatives against the scaled log-magnitude derivatives, restricted to
    bins whose magnitude exceeds ``mask_ratio`` times the peak. Returns
    ``(res_freq, res_time)`` in radians. Test instrumentation only.
    """
    if cfg.window_kind != "gaussian":
        raise ConfigError("gradient theorem residual requires a gaussian window")
    width = cfg.gauss_width
    spec = stft(wave, cfg)
    mag = spec.magnitudes()
    phases = spec.phases()
    logmag = log_magnitude(spec).data
    n_bins, n_frames = mag.shape
    if n_bins < 3 or n_frames < 3:
        raise ValueError("need at least 3 bins and 3 frames for central differences")
    mask = mag[1:-1, 1:-1] > mask_ratio * mag.max()
    if not mask.any():
        raise ValueError("no bins above the magnitude threshold")
    dt = cfg.hop / cfg.win_len
    core = phases[1:-1, 1:-1]

    # d(phase)/d(omega) per bin vs -width * d(logmag)/dt
    dphi_dw = 0.5 * (wrap(phases[2:, 1:-1] - core) + wrap(core - phases[:-2, 1:-1]))
    dm_dt = (logmag[1:-1, 2:] - logmag[1:-1, :-2]) / (2.0 * dt)
    res_freq = np.median(np.abs(dphi_dw + width * dm_dt)[mask])

    # centered BPD per hop vs (dt/width) * d(logmag)/d(omega)
    ramp = _ramp(n_bins, cfg.hop)[1:-1, None]
    bpd_c = 0.5 * (
        wrap(phases[1:-1, 2:] - core - ramp) + wrap(core - phases[1:-1, :-2] - ramp)
    )
    dm_dw = 0.5 * (logmag[2:, 1:-1] - logmag[:-2, 1:-1])
    res_time = np.median(np.abs(bpd_c - (dt / width) * dm_dw)[mask])
    return float(res_freq), float(res_time)
