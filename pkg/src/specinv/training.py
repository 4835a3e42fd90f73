"""Supervised training of the phase-derivative CNN with the von Mises loss.

Targets come from ground-truth STFT phases; the loss is periodic so targets
and raw network outputs need no wrapping. The backward pass is hand-written
(see cnn.backward_graph) and checked against finite differences in tests.
Training runs in double precision end to end and is bit-reproducible for a
fixed seed: every step derives its own RNG from (seed, step).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cnn, wav
from .phase import bpd_from_tpd, fpd, tpd
from .stft import AnalysisConfig, ComplexSpectrogram, Waveform, log_magnitude, stft
from .weights import BN_MOMENTUM, CnnWeights

log = logging.getLogger(__name__)

LOSS_CSV_HEADER = "step,loss_fpd,loss_bpd,lr"


@dataclass
class TrainingConfig:
    """Optimizer, schedule and data-sampling settings (desk-scale defaults)."""

    batch_size: int = 8
    steps: int = 500
    peak_lr: float = 1e-3
    rampup_steps: int = 100
    cycle_steps: int = 200
    cycle_decay: float = 0.97
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    segment_seconds: float = 1.0
    seed: int = 0
    checkpoint_every: int = 100

    def __post_init__(self):
        positives = (
            self.batch_size, self.steps, self.peak_lr, self.rampup_steps,
            self.cycle_steps, self.cycle_decay, self.beta1, self.beta2,
            self.eps, self.segment_seconds,
        )
        if any(not v > 0 for v in positives):
            raise ValueError("training config fields must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def von_mises_loss(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    """-sum(cos(pred - target)), optionally over a 0/1 mask. No normalization."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    c = np.cos(pred - target)
    if mask is not None:
        c = c * mask
    return float(-c.sum())


@dataclass
class TargetSet:
    """Per-frame FPD/BPD targets as (F, T) maps plus their loss masks.

    Row 0 of the FPD map (undefined bin difference) and column 0 of the BPD
    map (no previous frame) are zero and masked out.
    """

    fpd: np.ndarray
    bpd: np.ndarray
    fpd_mask: np.ndarray
    bpd_mask: np.ndarray


def extract_targets(spec: ComplexSpectrogram) -> TargetSet:
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames to extract targets")
    phases = spec.phases()
    n_bins, n_frames = phases.shape
    hop = spec.config.hop
    fpd_map = np.zeros((n_bins, n_frames))
    bpd_map = np.zeros((n_bins, n_frames))
    for tau in range(n_frames):
        fpd_map[1:, tau] = fpd(phases, tau)
        if tau >= 1:
            bpd_map[:, tau] = bpd_from_tpd(tpd(phases, tau), hop)
    fpd_mask = np.ones((n_bins, n_frames))
    fpd_mask[0, :] = 0.0
    bpd_mask = np.ones((n_bins, n_frames))
    bpd_mask[:, 0] = 0.0
    return TargetSet(fpd_map, bpd_map, fpd_mask, bpd_mask)


def _stack_targets(targets: list[TargetSet]):
    fpd_t = np.stack([t.fpd for t in targets])[:, None]
    bpd_t = np.stack([t.bpd for t in targets])[:, None]
    fpd_m = np.stack([t.fpd_mask for t in targets])[:, None]
    bpd_m = np.stack([t.bpd_mask for t in targets])[:, None]
    return fpd_t, bpd_t, fpd_m, bpd_m


def backward(x: np.ndarray, w: CnnWeights, targets: TargetSet | tuple):
    """Loss and exact gradients for one batch (train-mode BatchNorm).

    ``x`` is (B, 1, F, T) or (1, F, T); ``targets`` a TargetSet (single
    input) or the stacked arrays from ``_stack_targets``. Returns
    ``(loss, grads)`` with one gradient per learnable tensor.
    """
    loss, grads, _ = _backward_full(x, w, targets)
    return loss, grads


def _backward_full(x, w, targets):
    x4, _ = cnn._as_batched(x)
    if isinstance(targets, TargetSet):
        fpd_t, bpd_t = targets.fpd[None, None], targets.bpd[None, None]
        fpd_m, bpd_m = targets.fpd_mask[None, None], targets.bpd_mask[None, None]
    else:
        fpd_t, bpd_t, fpd_m, bpd_m = targets
    fpd_raw, bpd_raw, cache = cnn.forward_graph(x4, w, bn_mode="train", keep_cache=True)
    for name, arr in (("fpd", fpd_raw), ("bpd", bpd_raw)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite activations at the {name} head")
    loss_fpd = von_mises_loss(fpd_raw, fpd_t, fpd_m)
    loss_bpd = von_mises_loss(bpd_raw, bpd_t, bpd_m)
    d_fpd = np.sin(fpd_raw - fpd_t) * fpd_m
    d_bpd = np.sin(bpd_raw - bpd_t) * bpd_m
    grads = cnn.backward_graph(d_fpd, d_bpd, w, cache)
    extras = {
        "loss_fpd": loss_fpd,
        "loss_bpd": loss_bpd,
        "fpd_count": float(np.sum(fpd_m)),
        "bpd_count": float(np.sum(bpd_m)),
        "bn_stats": cache["bn_stats"],
    }
    return loss_fpd + loss_bpd, grads, extras


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per learnable tensor."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_weights(cls, w: CnnWeights) -> "AdamState":
        names = w.learnable_names()
        return cls(
            m={k: np.zeros_like(w[k]) for k in names},
            v={k: np.zeros_like(w[k]) for k in names},
        )


def learning_rate(step: int, cfg: TrainingConfig) -> float:
    """Linear ramp to peak_lr, then cosine cycles decayed by cycle_decay."""
    if step < cfg.rampup_steps:
        return cfg.peak_lr * (step + 1) / cfg.rampup_steps
    t = step - cfg.rampup_steps
    cycle, phase = divmod(t, cfg.cycle_steps)
    amp = cfg.peak_lr * cfg.cycle_decay**cycle
    return amp * 0.5 * (1.0 + np.cos(np.pi * phase / cfg.cycle_steps))


def optimizer_step(
    w: CnnWeights,
    grads: dict[str, np.ndarray],
    state: AdamState,
    step_index: int,
    cfg: TrainingConfig,
) -> CnnWeights:
    """Adam with decoupled weight decay, in place. Returns ``w``."""
    lr = learning_rate(step_index, cfg)
    t = step_index + 1
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name in w.learnable_names():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
        if cfg.weight_decay:
            update = update + cfg.weight_decay * w[name]
        w.tensors[name] -= lr * update
    return w


def _update_running_stats(w: CnnWeights, bn_stats: dict) -> None:
    for name, (mean, var) in bn_stats.items():
        w.tensors[f"{name}.running_mean"] = (
            (1.0 - BN_MOMENTUM) * w[f"{name}.running_mean"] + BN_MOMENTUM * mean
        )
        w.tensors[f"{name}.running_var"] = (
            (1.0 - BN_MOMENTUM) * w[f"{name}.running_var"] + BN_MOMENTUM * var
        )


def load_dataset(data_dir) -> list[Waveform]:
    """All readable mono WAVs under ``data_dir`` (non-recursive), sorted."""
    paths = sorted(Path(data_dir).glob("*.wav"))
    clips = []
    for p in paths:
        try:
            clips.append(wav.read_wav(p))
        except OSError as exc:
            log.warning("skipping %s: %s", p, exc)
    if not clips:
        raise ValueError(f"no readable WAV files in {data_dir}")
    return clips


def _sample_segment(clip: Waveform, seg_len: int, rng: np.random.Generator) -> np.ndarray:
    samples = clip.samples
    if samples.size < seg_len:
        samples = np.resize(samples, seg_len)
    start = int(rng.integers(0, samples.size - seg_len + 1))
    return samples[start : start + seg_len]


def _batch(clips, analysis: AnalysisConfig, cfg: TrainingConfig, step: int):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step]))
    seg_len = max(int(round(cfg.segment_seconds * analysis.sample_rate)), analysis.win_len)
    xs, targets = [], []
    for _ in range(cfg.batch_size):
        clip = clips[int(rng.integers(0, len(clips)))]
        seg = _sample_segment(clip, seg_len, rng)
        spec = stft(Waveform(seg, analysis.sample_rate), analysis)
        xs.append(log_magnitude(spec).data)
        targets.append(extract_targets(spec))
    x4 = np.stack(xs)[:, None]
    return x4, _stack_targets(targets)


@dataclass
class TrainResult:
    weights: CnnWeights
    rows: list[tuple[int, float, float, float]]


def _state_path(out_path) -> Path:
    return Path(str(out_path) + ".state.npz")


def save_checkpoint(path, w: CnnWeights, state: AdamState, step: int) -> None:
    """SIW1 weights plus a float64 sidecar with the full resume state."""
    w.save(path)
    arrays = {f"w.{k}": v for k, v in w.tensors.items()}
    arrays.update({f"m.{k}": v for k, v in state.m.items()})
    arrays.update({f"v.{k}": v for k, v in state.v.items()})
    np.savez(_state_path(path), step=np.int64(step), mode=w.mode, **arrays)


def load_checkpoint(path) -> tuple[CnnWeights, AdamState, int]:
    with np.load(_state_path(path)) as data:
        mode = str(data["mode"])
        tensors = {k[2:]: data[k] for k in data.files if k.startswith("w.")}
        w = CnnWeights(mode, tensors)
        state = AdamState(
            m={k[2:]: data[k] for k in data.files if k.startswith("m.")},
            v={k[2:]: data[k] for k in data.files if k.startswith("v.")},
        )
        step = int(data["step"])
    return w, state, step


def write_loss_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for step, loss_fpd, loss_bpd, lr in rows:
            fh.write(f"{step},{loss_fpd!r},{loss_bpd!r},{lr!r}\n")


def train(
    data_dir,
    cfg: TrainingConfig,
    mode: str = "full",
    analysis: AnalysisConfig | None = None,
    out_path=None,
    resume=None,
) -> TrainResult:
    """Train from a directory of mono WAVs; deterministic for a fixed seed.

    Logs per-step mean-per-element losses, checkpoints every
    ``checkpoint_every`` steps when ``out_path`` is given, and returns the
    final weights plus the loss rows.
    """
    if analysis is None:
        analysis = AnalysisConfig()
    clips = load_dataset(data_dir)
    if resume is not None:
        w, state, start_step = load_checkpoint(resume)
        if w.mode != mode:
            raise ValueError(f"checkpoint is {w.mode!r}, requested {mode!r}")
    else:
        w = CnnWeights.initialize(mode, seed=cfg.seed)
        state = AdamState.for_weights(w)
        start_step = 0
    rows = []
    for step in range(start_step, cfg.steps):
        x4, targets = _batch(clips, analysis, cfg, step)
        loss, grads, extras = _backward_full(x4, w, targets)
        optimizer_step(w, grads, state, step, cfg)
        _update_running_stats(w, extras["bn_stats"])
        lr = learning_rate(step, cfg)
        row = (
            step,
            extras["loss_fpd"] / extras["fpd_count"],
            extras["loss_bpd"] / extras["bpd_count"],
            lr,
        )
        rows.append(row)
        if step % 50 == 0 or step == cfg.steps - 1:
            log.info("step %d loss_fpd %.4f loss_bpd %.4f lr %.2e", *row)
        if out_path is not None and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_path, w, state, step + 1)
    if out_path is not None:
        save_checkpoint(out_path, w, state, cfg.steps)
    return TrainResult(w, rows)
