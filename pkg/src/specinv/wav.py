"""Mono WAV reading/writing: PCM 16-bit and 32-bit IEEE float only."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .stft import Waveform

_PCM16_SCALE = 32768.0


class AudioFormatError(OSError):
    """Unsupported or malformed audio file."""


def read_wav(path) -> Waveform:
    """Read a mono WAV file into float64 samples in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: mono required, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype}, expected int16 or float32"
        )
    if not np.all(np.isfinite(samples)):
        raise AudioFormatError(f"{path}: non-finite samples")
    return Waveform(samples, int(rate))


def write_wav(path, wave: Waveform, fmt: str = "float32") -> None:
    """Write a mono WAV file; ``fmt`` is 'float32' or 'pcm16'."""
    if fmt == "float32":
        data = wave.samples.astype(np.float32)
    elif fmt == "pcm16":
        scaled = np.clip(np.rint(wave.samples * _PCM16_SCALE), -32768, 32767)
        data = scaled.astype(np.int16)
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    wavfile.write(path, wave.sample_rate, data)
