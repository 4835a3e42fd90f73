"""Shared fixtures: synthetic signals and a small WAV corpus."""

import numpy as np
import pytest

from specinv import AnalysisConfig, Waveform
from specinv.wav import write_wav


def tone(freq_hz, n_samples, sr=16000, amp=0.5, phase=0.0):
    t = np.arange(n_samples) / sr
    return amp * np.cos(2 * np.pi * freq_hz * t + phase)


def chirp(f0, f1, n_samples, sr=16000, amp=0.5):
    t = np.arange(n_samples) / sr
    sweep = f0 + (f1 - f0) * t / (2 * t[-1])
    return amp * np.cos(2 * np.pi * sweep * t)


def am_chirp(n_samples, sr=16000):
    """Speech-like test signal: amplitude-modulated upward chirp."""
    env = 0.4 * (1.0 + 0.8 * np.sin(2 * np.pi * 3.0 * np.arange(n_samples) / sr))
    return env * chirp(300.0, 2500.0, n_samples, sr, amp=1.0)


def noise(n_samples, seed=0, amp=0.5):
    return amp * np.random.default_rng(seed).standard_normal(n_samples)


def synth_clip(kind, n_samples, rng, sr=16000):
    if kind == "tone":
        return tone(float(rng.uniform(100, 4000)), n_samples, sr)
    if kind == "chirp":
        f0 = float(rng.uniform(100, 2000))
        return chirp(f0, f0 + float(rng.uniform(500, 3000)), n_samples, sr)
    if kind == "noise":
        return 0.3 * rng.standard_normal(n_samples)
    if kind == "am":
        return am_chirp(n_samples, sr)
    raise ValueError(kind)


def make_corpus(directory, n_clips=20, seconds=1.0, sr=16000, seed=0):
    rng = np.random.default_rng(seed)
    kinds = ["tone", "chirp", "noise", "am"]
    n = int(seconds * sr)
    for i in range(n_clips):
        clip = synth_clip(kinds[i % len(kinds)], n, rng, sr)
        write_wav(directory / f"clip_{i:03d}.wav", Waveform(clip, sr), fmt="pcm16")
    return directory


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    return make_corpus(d, n_clips=12, seconds=0.6)


@pytest.fixture(scope="session")
def default_cfg():
    return AnalysisConfig(1024, 256)


@pytest.fixture(scope="session")
def small_cfg():
    return AnalysisConfig(256, 64)
