"""Streaming spectrogram inversion.

A two-stage engine: a tiny causal CNN predicts per-frame phase-derivative
features from STFT log-magnitudes, and an O(n) Hermitian tridiagonal
least-squares solve recovers the phases frame by frame.
"""

from .stft import (
    AnalysisConfig,
    ComplexSpectrogram,
    ConfigError,
    LogMagnitudeSpectrogram,
    Waveform,
    istft,
    log_magnitude,
    make_window,
    stft,
)
from .phase import (
    ComplexRatios,
    bpd_from_tpd,
    complex_ratios,
    fpd,
    gradient_theorem_residual,
    tpd,
    tpd_from_bpd,
    wrap,
)
from .solver import (
    SolverFailure,
    TridiagonalHermitianSystem,
    WeightFrame,
    build_system,
    dense_solve_oracle,
    iterative_solve,
    make_weights,
    thomas_solve,
)
from .cnn import (
    batchnorm,
    conv2d_causal,
    count_params_and_macs,
    forward,
    freq_gated_conv,
    leaky_relu,
)
from .weights import CnnWeights, WeightsFormatError
from .training import TrainingConfig, backward, extract_targets, optimizer_step, train, von_mises_loss
from .pipeline import InversionReport, StreamState, invert, lsc, step
from .wav import AudioFormatError, read_wav, write_wav

__version__ = "0.1.0"
