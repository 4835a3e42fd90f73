"""Command-line interface: invert, train, bench, metrics, roundtrip.

JSON results go to stdout, logs to stderr. Exit codes: 0 success, 2 I/O or
audio-format error, 3 configuration mismatch, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench, pipeline, training, wav
from .solver import SolverFailure
from .stft import AnalysisConfig, ConfigError, istft, log_magnitude, stft
from .weights import CnnWeights, WeightsFormatError

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4

log = logging.getLogger("specinv")


def _parse_window(text: str) -> tuple[str, float | None]:
    if text == "hann":
        return "hann", None
    if text.startswith("gaussian:"):
        return "gaussian", float(text.split(":", 1)[1])
    raise ConfigError(f"--window must be 'hann' or 'gaussian:<width>', got {text!r}")


def _parse_init(text: str) -> tuple[str, int]:
    if text == "zeros":
        return "zeros", 0
    if text == "oracle":
        return "oracle", 0
    if text.startswith("random:"):
        return "random", int(text.split(":", 1)[1])
    if text == "random":
        return "random", 0
    raise ConfigError(f"--init must be zeros, random[:<seed>] or oracle, got {text!r}")


def _parse_sizes(text: str) -> list[int]:
    """'128..8192' doubles from 128 to 8192; comma lists are taken verbatim."""
    if ".." in text:
        lo, hi = (int(v) for v in text.split("..", 1))
        sizes = []
        n = lo
        while n <= hi:
            sizes.append(n)
            n *= 2
        return sizes
    return [int(v) for v in text.split(",")]


def _analysis_config(args) -> AnalysisConfig:
    kind, width = _parse_window(args.window)
    return AnalysisConfig(
        win_len=args.win, hop=args.hop, window_kind=kind, gauss_width=width
    )


def _add_stft_flags(parser):
    parser.add_argument("--win", type=int, default=1024, help="window length in samples (default: 1024)")
    parser.add_argument("--hop", type=int, default=256, help="hop size in samples (default: 256)")
    parser.add_argument(
        "--window", default="hann", help="analysis window: hann or gaussian:<width> (default: hann)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specinv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_invert = sub.add_parser("invert", help="reconstruct a waveform from its log-magnitudes")
    _add_stft_flags(p_invert)
    p_invert.add_argument("--input", required=True, help="input WAV file or directory")
    p_invert.add_argument("--output", required=True, help="output WAV file or directory")
    p_invert.add_argument("--weights", default=None, help="SIW1 weights file (default: none)")
    p_invert.add_argument("--mode", choices=("full", "strided"), default="full", help="inference mode (default: full)")
    p_invert.add_argument("--lookahead", choices=("on", "off"), default="on", help="strided look-ahead (default: on)")
    p_invert.add_argument("--init", default="zeros", help="frame-0 phase: zeros, random:<seed> or oracle (default: zeros)")
    p_invert.add_argument("--oracle-features", action="store_true", help="use ground-truth-derived features (default: off)")
    p_invert.add_argument("--scheme", choices=("geometric", "squared", "uniform"), default="geometric", help="solver weight scheme (default: geometric)")
    p_invert.add_argument("--format", choices=("float32", "pcm16"), default="float32", help="output sample format (default: float32)")
    p_invert.add_argument("--jobs", type=int, default=1, help="parallel workers in directory mode (default: 1)")
    p_invert.set_defaults(func=cmd_invert)

    p_train = sub.add_parser("train", help="train the phase-derivative CNN")
    _add_stft_flags(p_train)
    p_train.add_argument("--data", required=True, help="directory of mono WAV files")
    p_train.add_argument("--out", required=True, help="output SIW1 weights file")
    p_train.add_argument("--mode", choices=("full", "strided"), default="full", help="network mode (default: full)")
    p_train.add_argument("--steps", type=int, default=500, help="training steps (default: 500)")
    p_train.add_argument("--batch-size", type=int, default=8, help="batch size (default: 8)")
    p_train.add_argument("--segment-seconds", type=float, default=1.0, help="training segment length (default: 1.0)")
    p_train.add_argument("--lr", type=float, default=1e-3, help="peak learning rate (default: 0.001)")
    p_train.add_argument("--rampup", type=int, default=100, help="LR ramp-up steps (default: 100)")
    p_train.add_argument("--cycle", type=int, default=200, help="cosine cycle length (default: 200)")
    p_train.add_argument("--cycle-decay", type=float, default=0.97, help="per-cycle LR decay (default: 0.97)")
    p_train.add_argument("--weight-decay", type=float, default=1e-5, help="decoupled weight decay (default: 1e-05)")
    p_train.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    p_train.add_argument("--checkpoint-every", type=int, default=100, help="checkpoint interval in steps (default: 100)")
    p_train.add_argument("--resume", default=None, help="resume from a checkpoint weights path (default: none)")
    p_train.add_argument("--loss-csv", default=None, help="loss log path (default: <out>.loss.csv)")
    p_train.set_defaults(func=cmd_train)

    p_bench = sub.add_parser("bench", help="solver scaling and CNN cost benchmarks")
    p_bench.add_argument("--solvers", action="store_true", help="benchmark the solvers (default: off)")
    p_bench.add_argument("--cnn", action="store_true", help="benchmark CNN inference (default: off)")
    p_bench.add_argument("--sizes", default="128..8192", help="system sizes, e.g. 65,1024 or 128..8192 (default: 128..8192)")
    p_bench.add_argument("--runs", type=int, default=10, help="timed runs per case (default: 10)")
    p_bench.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    p_bench.add_argument("--dense-cap", type=int, default=4096, help="skip the dense solver above this size (default: 4096)")
    p_bench.add_argument("--tol", type=float, default=1e-8, help="iterative solver tolerance (default: 1e-08)")
    p_bench.add_argument("--csv", default=None, help="solver CSV output path (default: stdout summary only)")
    p_bench.add_argument("--freq-bins", type=int, default=513, help="CNN frequency bins (default: 513)")
    p_bench.set_defaults(func=cmd_bench)

    p_metrics = sub.add_parser("metrics", help="log-spectral convergence between two WAVs")
    _add_stft_flags(p_metrics)
    p_metrics.add_argument("--ref", required=True, help="reference WAV")
    p_metrics.add_argument("--est", required=True, help="estimate WAV")
    p_metrics.set_defaults(func=cmd_metrics)

    p_round = sub.add_parser("roundtrip", help="STFT -> ISTFT self-test on a WAV")
    _add_stft_flags(p_round)
    p_round.add_argument("--input", required=True, help="input WAV file")
    p_round.add_argument("--output", default=None, help="optional reconstructed WAV path (default: none)")
    p_round.set_defaults(func=cmd_roundtrip)
    return parser


def _invert_one(args, cfg, in_path, out_path) -> dict:
    wave = wav.read_wav(in_path)
    ref = stft(wave, cfg)
    logmag = log_magnitude(ref)
    init, seed = _parse_init(args.init)
    if init == "oracle" and not args.oracle_features:
        raise ConfigError("--init oracle requires --oracle-features")
    if args.mode == "full" and args.lookahead == "off":
        raise ConfigError("--lookahead off applies only with --mode strided")
    weights = None
    if not args.oracle_features:
        if args.weights is None:
            raise ConfigError("--weights is required unless --oracle-features is given")
        weights = CnnWeights.load(args.weights)
    est, report = pipeline.invert(
        logmag,
        weights=weights,
        mode=args.mode,
        init=init,
        seed=seed,
        oracle=ref if args.oracle_features else None,
        oracle_features=args.oracle_features,
        weight_scheme=args.scheme,
        lookahead=args.lookahead == "on",
        length=len(wave),
    )
    wav.write_wav(out_path, est, fmt=args.format)
    return json.loads(report.to_json(cfg))


def cmd_invert(args) -> int:
    cfg = _analysis_config(args)
    in_path, out_path = Path(args.input), Path(args.output)
    if in_path.is_dir():
        files = sorted(in_path.glob("*.wav"))
        if not files:
            raise FileNotFoundError(f"no WAV files in {in_path}")
        out_path.mkdir(parents=True, exist_ok=True)
        pairs = [(f, out_path / f.name) for f in files]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_invert_one, *zip(*[(args, cfg, a, b) for a, b in pairs])))
        else:
            reports = [_invert_one(args, cfg, a, b) for a, b in pairs]
        print(json.dumps({str(a): r for (a, _), r in zip(pairs, reports)}))
    else:
        print(json.dumps(_invert_one(args, cfg, in_path, out_path)))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = training.TrainingConfig(
        batch_size=args.batch_size,
        steps=args.steps,
        peak_lr=args.lr,
        rampup_steps=args.rampup,
        cycle_steps=args.cycle,
        cycle_decay=args.cycle_decay,
        weight_decay=args.weight_decay,
        segment_seconds=args.segment_seconds,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    analysis = _analysis_config(args)
    try:
        result = training.train(
            args.data, cfg, mode=args.mode, analysis=analysis,
            out_path=args.out, resume=args.resume,
        )
    except ValueError as exc:
        if "no readable WAV" in str(exc):
            raise FileNotFoundError(str(exc)) from exc
        raise
    csv_path = args.loss_csv or f"{args.out}.loss.csv"
    training.write_loss_csv(csv_path, result.rows)
    print(json.dumps({
        "steps": args.steps,
        "final_loss_fpd": result.rows[-1][1],
        "final_loss_bpd": result.rows[-1][2],
        "weights": str(args.out),
        "loss_csv": str(csv_path),
    }))
    return EXIT_OK


def cmd_bench(args) -> int:
    if not (args.solvers or args.cnn):
        raise ConfigError("nothing to do: pass --solvers and/or --cnn")
    summary: dict = {}
    if args.solvers:
        sizes = _parse_sizes(args.sizes)
        records, checksums = bench.bench_solvers(
            sizes, runs=args.runs, seed=args.seed, dense_cap=args.dense_cap, tol=args.tol
        )
        for n, digest in checksums.items():
            log.info("system n=%d checksum %s", n, digest)
        if args.csv:
            bench.write_solver_csv(args.csv, records, seed=args.seed, tol=args.tol)
        summary["solvers"] = {
            f"{r.solver}/{r.n}": {"median_ns": r.median_ns} for r in records
        }
        summary["checksums"] = checksums
    if args.cnn:
        for mode in ("full", "strided"):
            w = CnnWeights.initialize(mode, seed=args.seed)
            record, stats = bench.bench_cnn(w, freq_bins=args.freq_bins, runs=args.runs)
            stats["median_ns_per_frame"] = record.median_ns
            summary[f"cnn_{mode}"] = stats
    print(json.dumps(summary))
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _analysis_config(args)
    ref_wave = wav.read_wav(args.ref)
    est_wave = wav.read_wav(args.est)
    if abs(len(ref_wave) - len(est_wave)) > cfg.hop:
        raise ConfigError(
            f"length mismatch beyond one frame: {len(ref_wave)} vs {len(est_wave)}"
        )
    ref = stft(ref_wave, cfg)
    value = pipeline.lsc(ref, est_wave)
    print(json.dumps({"lsc_db": value, "frames": ref.n_frames}))
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    cfg = _analysis_config(args)
    wave = wav.read_wav(args.input)
    rec = istft(stft(wave, cfg), length=len(wave))
    win = cfg.win_len
    interior = slice(win, max(len(wave) - win, win))
    err = float(np.abs(rec.samples[interior] - wave.samples[interior]).max(initial=0.0))
    scale = float(np.abs(wave.samples).max(initial=0.0))
    if args.output:
        wav.write_wav(args.output, rec)
    print(json.dumps({"max_interior_error": err, "peak": scale, "samples": len(wave)}))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (wav.AudioFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except SolverFailure as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (ConfigError, WeightsFormatError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
