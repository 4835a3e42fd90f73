"""Timing harness for the per-frame solvers and the CNN.

Systems are built from seeded standard-Gaussian ratios and half-normal
weights (the weight diagonals must be nonnegative). Measurements are
single-threaded in our own code; the dense baseline's LAPACK call may use
whatever threading the BLAS provides, which only flatters the baseline.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from . import cnn
from .phase import ComplexRatios
from .solver import (
    TridiagonalHermitianSystem,
    WeightFrame,
    build_system,
    dense_solve_oracle,
    iterative_solve,
    thomas_solve,
)
from .weights import CnnWeights

# Prior-architecture constants used for the reported reduction ratios.
PREV_PARAMS = 247_810
PREV_GMAC_PER_S = 7.95

SOLVER_CSV_HEADER = "solver,n,runs,median_ns,p01_ns,p99_ns"
DEFAULT_ITERATIVE_TOL = 1e-8


@dataclass
class BenchRecord:
    solver: str
    n: int
    runs: int
    median_ns: float
    p01_ns: float
    p99_ns: float

    def __post_init__(self):
        if self.runs < 10:
            raise ValueError("benchmark records need at least 10 runs")
        if not self.p01_ns <= self.median_ns <= self.p99_ns:
            raise ValueError("percentiles out of order")

    def csv_row(self) -> str:
        return (
            f"{self.solver},{self.n},{self.runs},"
            f"{self.median_ns:.0f},{self.p01_ns:.0f},{self.p99_ns:.0f}"
        )


def random_system(n: int, seed: int = 0) -> TridiagonalHermitianSystem:
    """Seeded random PSD system from Gaussian ratios and half-normal weights."""
    if n < 2:
        raise ValueError("system size must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))

    def cnormal(size):
        return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)

    ratios = ComplexRatios(cnormal(n - 1), cnormal(n))
    weights = WeightFrame(
        np.abs(rng.standard_normal(n)), np.abs(rng.standard_normal(n - 1))
    )
    return build_system(ratios, cnormal(n), weights)


def system_checksum(sys: TridiagonalHermitianSystem) -> str:
    h = hashlib.sha256()
    for arr in (sys.diag, sys.lower, sys.upper, sys.rhs):
        h.update(arr.tobytes())
    return h.hexdigest()[:16]


def _timed(fn, runs: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    samples = np.empty(runs)
    for i in range(runs):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - t0
    return samples


def _record(solver: str, n: int, samples: np.ndarray) -> BenchRecord:
    p01, med, p99 = np.percentile(samples, [1, 50, 99])
    return BenchRecord(solver, n, samples.size, med, p01, p99)


def bench_solvers(
    sizes,
    runs: int = 10,
    seed: int = 0,
    dense_cap: int = 4096,
    warmup: int = 3,
    tol: float = DEFAULT_ITERATIVE_TOL,
    solvers=("thomas", "dense", "iterative"),
) -> tuple[list[BenchRecord], dict[int, str]]:
    """Time each solver on one seeded system per size.

    The dense solver is skipped above ``dense_cap`` to bound runtime. Before
    timing, every solver's answer on the same system is checked against the
    dense oracle (or against Thomas when dense is capped out); a mismatch
    above 1e-6 relative aborts the benchmark.
    """
    records: list[BenchRecord] = []
    checksums: dict[int, str] = {}
    for n in sizes:
        system = random_system(n, seed)
        checksums[n] = system_checksum(system)
        use_dense = "dense" in solvers and n <= dense_cap
        x_thomas = thomas_solve(system)
        reference = dense_solve_oracle(system) if use_dense else x_thomas
        ref_scale = np.abs(reference).max()
        runners = {}
        if "thomas" in solvers:
            runners["thomas"] = lambda s=system: thomas_solve(s)
            _check_agreement("thomas", x_thomas, reference, ref_scale, n)
        if use_dense:
            runners["dense"] = lambda s=system: dense_solve_oracle(s)
        if "iterative" in solvers:
            runners["iterative"] = lambda s=system: iterative_solve(s, tol=tol).x
            _check_agreement(
                "iterative", iterative_solve(system, tol=tol).x, reference, ref_scale, n
            )
        for name, fn in runners.items():
            records.append(_record(name, n, _timed(fn, runs, warmup)))
    return records, checksums


def _check_agreement(name, x, reference, ref_scale, n):
    err = np.abs(x - reference).max() / ref_scale
    if err > 1e-6:
        raise AssertionError(f"{name} disagrees with the oracle at n={n}: {err:.2e}")


def write_solver_csv(path, records, seed: int, tol: float = DEFAULT_ITERATIVE_TOL) -> None:
    with open(path, "w") as fh:
        fh.write(f"# specinv solver bench: iterative_tol={tol}, seed={seed}\n")
        fh.write(SOLVER_CSV_HEADER + "\n")
        for rec in records:
            fh.write(rec.csv_row() + "\n")


def bench_cnn(
    weights: CnnWeights,
    freq_bins: int = 513,
    runs: int = 10,
    frames: int = 64,
    frames_per_second: float = 62.5,
    warmup: int = 3,
    seed: int = 0,
) -> tuple[BenchRecord, dict]:
    """Wall time per frame for one inference mode, plus cost accounting."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, freq_bins, frames))
    samples = _timed(lambda: cnn.forward(x, weights, weights.mode), runs, warmup) / frames
    record = _record(f"cnn_{weights.mode}", freq_bins, samples)
    params, macs_per_frame, gmac = cnn.count_params_and_macs(
        weights, freq_bins, frames_per_second
    )
    stats = {
        "mode": weights.mode,
        "params": params,
        "macs_per_frame": macs_per_frame,
        "gmac_per_s": gmac,
        "param_reduction_vs_prev": PREV_PARAMS / params,
        "gmac_reduction_vs_prev": PREV_GMAC_PER_S / gmac,
    }
    return record, stats
