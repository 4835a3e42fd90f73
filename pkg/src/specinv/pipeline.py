"""Online frame-by-frame spectrogram inversion and the LSC metric.

Per frame: CNN features (or oracle features from true phases) -> complex
ratios -> tridiagonal system -> Thomas solve -> phase extraction. The
magnitudes are taken as given; only phases are estimated. The recursion is
sequential across frames; frame 0's phase comes from the init mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cnn
from .phase import bpd_from_tpd, complex_ratios, fpd, tpd, tpd_from_bpd, wrap
from .solver import (
    SolverFailure,
    WeightFrame,
    build_system,
    make_weights,
    solve_residual,
    thomas_solve,
)
from .stft import (
    AnalysisConfig,
    ComplexSpectrogram,
    ConfigError,
    LogMagnitudeSpectrogram,
    Waveform,
    istft,
    stft,
)
from .weights import CnnWeights

LSC_FLOOR_DB = -120.0

WeightScheme = str | Callable[[np.ndarray, np.ndarray], WeightFrame]


@dataclass
class StreamState:
    """Recursion state: previous complex frame estimate and frame index."""

    prev_frame: np.ndarray
    frame_index: int = 0
    last_residual: float = 0.0

    def __post_init__(self):
        self.prev_frame = np.asarray(self.prev_frame, dtype=np.complex128)


@dataclass
class InversionReport:
    lsc_db: float
    frames: int
    residuals: np.ndarray
    mode: str
    init: str

    def to_json(self, config: AnalysisConfig | None = None) -> str:
        payload = {
            "lsc_db": self.lsc_db,
            "frames": self.frames,
            "mode": self.mode,
            "init": self.init,
            "max_solver_residual": float(self.residuals.max(initial=0.0)),
        }
        if config is not None:
            payload["config"] = {
                "win_len": config.win_len,
                "hop": config.hop,
                "window": config.window_kind,
                "sample_rate": config.sample_rate,
            }
        return json.dumps(payload)


def _resolve_weights(scheme: WeightScheme, mag_prev, mag_cur) -> WeightFrame:
    if callable(scheme):
        return scheme(mag_prev, mag_cur)
    return make_weights(mag_prev, mag_cur, scheme)


def step(
    state: StreamState,
    mag_cur: np.ndarray,
    fpd_hat: np.ndarray,
    bpd_hat: np.ndarray,
    hop: int,
    weight_scheme: WeightScheme = "geometric",
) -> tuple[np.ndarray, StreamState]:
    """Advance the recursion by one frame.

    ``fpd_hat`` has length L (bins 1..L), ``bpd_hat`` length L+1. Returns
    the complex frame estimate (input magnitudes with estimated phases) and
    the advanced state; the solve residual is recorded on the new state.
    """
    mag_prev = np.abs(state.prev_frame)
    v_hat = tpd_from_bpd(bpd_hat, hop)
    ratios = complex_ratios(mag_prev, mag_cur, fpd_hat, v_hat)
    weights = _resolve_weights(weight_scheme, mag_prev, mag_cur)
    system = build_system(ratios, state.prev_frame, weights)
    try:
        z = thomas_solve(system)
    except SolverFailure as exc:
        raise SolverFailure(f"frame {state.frame_index + 1}: {exc}") from exc
    frame = mag_cur * np.exp(1j * np.angle(z))
    new_state = StreamState(frame, state.frame_index + 1, solve_residual(system, z))
    return frame, new_state


def _oracle_features(oracle: ComplexSpectrogram) -> tuple[np.ndarray, np.ndarray]:
    phases = oracle.phases()
    n_bins, n_frames = phases.shape
    fpd_map = np.zeros((n_bins, n_frames))
    bpd_map = np.zeros((n_bins, n_frames))
    for tau in range(n_frames):
        fpd_map[1:, tau] = fpd(phases, tau)
        if tau >= 1:
            bpd_map[:, tau] = bpd_from_tpd(tpd(phases, tau), oracle.config.hop)
    return fpd_map, bpd_map


def _cnn_features(
    log_mag: LogMagnitudeSpectrogram, weights: CnnWeights, mode: str, lookahead: bool
) -> tuple[np.ndarray, np.ndarray]:
    fpd_raw, bpd_raw = cnn.forward(log_mag.data[None], weights, mode)
    fpd_map, bpd_map = wrap(fpd_raw[0]), wrap(bpd_raw[0])
    if mode == "strided" and not lookahead:
        # No look-ahead: the skipped-frame channel is discarded and odd
        # frames reuse the most recent anchor-frame features.
        for col in range(1, fpd_map.shape[1], 2):
            fpd_map[:, col] = fpd_map[:, col - 1]
            bpd_map[:, col] = bpd_map[:, col - 1]
    return fpd_map, bpd_map


def _init_phase(init: str, n_bins: int, seed: int, oracle: ComplexSpectrogram | None):
    if init == "zeros":
        return np.zeros(n_bins)
    if init == "random":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1F0]))
        return rng.uniform(-np.pi, np.pi, size=n_bins)
    if init == "oracle":
        if oracle is None:
            raise ConfigError("init 'oracle' requires an oracle spectrogram")
        return np.angle(oracle.data[:, 0])
    raise ConfigError(f"unknown init mode {init!r}")


def invert_frames(
    log_mag: LogMagnitudeSpectrogram,
    weights: CnnWeights | None = None,
    mode: str = "full",
    init: str = "zeros",
    seed: int = 0,
    oracle: ComplexSpectrogram | None = None,
    oracle_features: bool = False,
    weight_scheme: WeightScheme = "geometric",
    lookahead: bool = True,
) -> tuple[ComplexSpectrogram, InversionReport]:
    """Estimate complex STFT frames from log-magnitudes (no ISTFT)."""
    cfg = log_mag.config
    mags = log_mag.magnitudes()
    n_bins, n_frames = mags.shape
    if oracle_features:
        if oracle is None:
            raise ConfigError("oracle_features requires the true spectrogram")
        if oracle.data.shape != mags.shape:
            raise ConfigError("oracle geometry does not match the log-magnitudes")
        fpd_map, bpd_map = _oracle_features(oracle)
    else:
        if weights is None:
            raise ConfigError("CNN weights are required unless oracle_features is set")
        if weights.mode != mode:
            raise ConfigError(f"weights are {weights.mode!r} but mode is {mode!r}")
        fpd_map, bpd_map = _cnn_features(log_mag, weights, mode, lookahead)
    estimates = np.empty((n_bins, n_frames), dtype=np.complex128)
    estimates[:, 0] = mags[:, 0] * np.exp(1j * _init_phase(init, n_bins, seed, oracle))
    state = StreamState(estimates[:, 0], 0)
    residuals = np.zeros(max(n_frames - 1, 0))
    for tau in range(1, n_frames):
        frame, state = step(
            state, mags[:, tau], fpd_map[1:, tau], bpd_map[:, tau], cfg.hop, weight_scheme
        )
        estimates[:, tau] = frame
        residuals[tau - 1] = state.last_residual
    est_spec = ComplexSpectrogram(estimates, cfg)
    lsc_db = _lsc_magnitudes(mags, istft(est_spec), cfg)
    report = InversionReport(lsc_db, n_frames, residuals, mode, init)
    return est_spec, report


def invert(
    log_mag: LogMagnitudeSpectrogram,
    weights: CnnWeights | None = None,
    mode: str = "full",
    init: str = "zeros",
    seed: int = 0,
    oracle: ComplexSpectrogram | None = None,
    oracle_features: bool = False,
    weight_scheme: WeightScheme = "geometric",
    lookahead: bool = True,
    length: int | None = None,
) -> tuple[Waveform, InversionReport]:
    """Full inversion: estimate phases frame by frame, then ISTFT."""
    est_spec, report = invert_frames(
        log_mag,
        weights=weights,
        mode=mode,
        init=init,
        seed=seed,
        oracle=oracle,
        oracle_features=oracle_features,
        weight_scheme=weight_scheme,
        lookahead=lookahead,
    )
    return istft(est_spec, length=length), report


def _lsc_magnitudes(ref_mags: np.ndarray, est_wave: Waveform, cfg: AnalysisConfig) -> float:
    den = np.linalg.norm(ref_mags)
    if den == 0:
        raise ValueError("zero reference spectrogram")
    est_mags = np.abs(stft(est_wave, cfg).data)
    n_frames = min(ref_mags.shape[1], est_mags.shape[1])
    num = np.linalg.norm(est_mags[:, :n_frames] - ref_mags[:, :n_frames])
    if num == 0:
        return LSC_FLOOR_DB
    return max(20.0 * np.log10(num / den), LSC_FLOOR_DB)


def lsc(ref: ComplexSpectrogram, est_wave: Waveform) -> float:
    """Log-spectral convergence in dB (lower is better), floored at -120."""
    return _lsc_magnitudes(ref.magnitudes(), est_wave, ref.config)
