"""Hermitian PSD tridiagonal systems: direct diagonal construction and solvers.

The per-frame phase least-squares problem reduces to ``A z = b`` with
``A = Lambda + D^H Gamma D`` tridiagonal, Hermitian and PSD. The diagonals
are assembled directly from the complex ratios and per-bin weights, and the
system is solved in O(n) time and memory with a pivot-free elimination
(Thomas), safe because a small diagonal shift makes A positive definite.
Dense and matrix-free iterative solvers are provided as validation and
benchmark baselines.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .phase import ComplexRatios

# Diagonal shift, relative to max(diag), applied by every solver.
REG_DELTA = 1e-12


class SolverFailure(RuntimeError):
    """Zero pivot, singular matrix, or a solve that cannot proceed."""


@dataclass
class WeightFrame:
    """Nonnegative per-bin weights: lambda for the time term, gamma for the
    frequency term (one entry per adjacent-bin pair)."""

    lambda_w: np.ndarray
    gamma_w: np.ndarray

    def __post_init__(self):
        self.lambda_w = np.asarray(self.lambda_w, dtype=np.float64)
        self.gamma_w = np.asarray(self.gamma_w, dtype=np.float64)
        if self.gamma_w.size + 1 != self.lambda_w.size:
            raise ValueError(
                f"gamma must be one shorter than lambda, got "
                f"{self.gamma_w.size} and {self.lambda_w.size}"
            )
        if self.lambda_w.min() < 0 or (self.gamma_w.size and self.gamma_w.min() < 0):
            raise ValueError("weights must be nonnegative")
        if self.lambda_w.max(initial=0.0) == 0 and self.gamma_w.max(initial=0.0) == 0:
            raise ValueError("weights must not be all zero")


def make_weights(mag_prev: np.ndarray, mag_cur: np.ndarray, scheme: str = "geometric") -> WeightFrame:
    """Build a weight frame from neighbor magnitudes.

    'geometric' couples the two magnitudes each residual term relates,
    'squared' uses the squared current magnitude for the time term, and
    'uniform' weights every bin equally.
    """
    mag_prev = np.asarray(mag_prev, dtype=np.float64)
    mag_cur = np.asarray(mag_cur, dtype=np.float64)
    if scheme == "geometric":
        return WeightFrame(mag_prev * mag_cur, mag_cur[:-1] * mag_cur[1:])
    if scheme == "squared":
        return WeightFrame(mag_cur * mag_cur, mag_cur[:-1] * mag_cur[1:])
    if scheme == "uniform":
        return WeightFrame(np.ones_like(mag_cur), np.ones(mag_cur.size - 1))
    raise ValueError(f"unknown weight scheme {scheme!r}")


@dataclass
class TridiagonalHermitianSystem:
    """Three diagonals plus right-hand side; diag is real, upper = conj(lower)."""

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.diag = np.ascontiguousarray(self.diag, dtype=np.complex128)
        self.lower = np.ascontiguousarray(self.lower, dtype=np.complex128)
        self.upper = np.ascontiguousarray(self.upper, dtype=np.complex128)
        self.rhs = np.ascontiguousarray(self.rhs, dtype=np.complex128)
        n = self.diag.size
        if self.rhs.size != n or self.lower.size != n - 1 or self.upper.size != n - 1:
            raise ValueError("inconsistent diagonal/rhs lengths")
        if np.any(self.diag.imag != 0) or np.any(self.diag.real < 0):
            raise ValueError("diag entries must be real and nonnegative")
        if not np.array_equal(self.upper, self.lower.conj()):
            raise ValueError("system is not Hermitian: upper != conj(lower)")

    @property
    def n(self) -> int:
        return self.diag.size

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y

    def to_dense(self, regularized: bool = False) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.complex128)
        idx = np.arange(self.n)
        a[idx, idx] = self.diag + (self._shift() if regularized else 0.0)
        a[idx[1:], idx[:-1]] = self.lower
        a[idx[:-1], idx[1:]] = self.upper
        return a

    def _shift(self) -> float:
        return REG_DELTA * float(self.diag.real.max(initial=0.0))


def build_system(
    ratios: ComplexRatios, prev_frame: np.ndarray, weights: WeightFrame
) -> TridiagonalHermitianSystem:
    """Assemble the normal equations directly on the three diagonals.

    With ``d = -u_ratio`` (the main diagonal of the bin-difference operator):
    ``diag[l] = lambda[l] + gamma[l]*|d[l]|^2 + gamma[l-1]``,
    ``lower[l] = gamma[l]*d[l]``, ``upper[l] = conj(lower[l])``, and
    ``rhs = lambda * prev_frame * v_ratio``.
    """
    lam, gam = weights.lambda_w, weights.gamma_w
    prev_frame = np.asarray(prev_frame, dtype=np.complex128)
    n = lam.size
    if ratios.v_ratio.size != n or prev_frame.size != n:
        raise ValueError("length mismatch between ratios, prev_frame and weights")
    d = -ratios.u_ratio
    diag = lam.copy()
    diag[:-1] += gam * (d.real * d.real + d.imag * d.imag)
    diag[1:] += gam
    lower = gam * d
    return TridiagonalHermitianSystem(diag, lower, lower.conj(), lam * prev_frame * ratios.v_ratio)


def _thomas_kernel(diag, lower, upper, rhs, scratch, out):
    # Forward elimination and back substitution; returns the index of the
    # first zero pivot, or -1 on success. Compiled with numba when available.
    n = diag.shape[0]
    piv = diag[0]
    if piv == 0:
        return 0
    if n > 1:
        scratch[0] = upper[0] / piv
    out[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * scratch[i - 1]
        if piv == 0:
            return i
        if i < n - 1:
            scratch[i] = upper[i] / piv
        out[i] = (rhs[i] - lower[i - 1] * out[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - scratch[i] * out[i + 1]
    return -1


_thomas_kernel_py = _thomas_kernel

if not os.environ.get("SPECINV_DISABLE_NUMBA"):
    try:
        from numba import njit

        _thomas_kernel = njit(cache=True)(_thomas_kernel_py)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass


def _regularized_diag(sys: TridiagonalHermitianSystem) -> np.ndarray:
    return sys.diag + sys._shift()


def thomas_solve(sys: TridiagonalHermitianSystem) -> np.ndarray:
    """O(n) pivot-free solve of the regularized system."""
    n = sys.n
    scratch = np.empty(n, dtype=np.complex128)
    out = np.empty(n, dtype=np.complex128)
    bad = _thomas_kernel(_regularized_diag(sys), sys.lower, sys.upper, sys.rhs, scratch, out)
    if bad >= 0:
        raise SolverFailure(f"zero pivot at row {bad} (ill-posed weights)")
    return out


def dense_solve_oracle(sys: TridiagonalHermitianSystem) -> np.ndarray:
    """Materialize the full matrix and solve it densely; baseline/oracle only."""
    a = sys.to_dense(regularized=True)
    try:
        return scipy.linalg.solve(a, sys.rhs, assume_a="pos", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverFailure(f"dense solve failed: {exc}") from exc


class IterativeResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    rel_residual: float


def iterative_solve(
    sys: TridiagonalHermitianSystem, tol: float = 1e-8, max_iter: int | None = None
) -> IterativeResult:
    """Matrix-free Jacobi-preconditioned conjugate gradients; baseline only.

    Uses only the three diagonals for the matvec. Terminates when the
    relative residual drops below ``tol`` or after ``max_iter`` (default n)
    iterations; non-convergence is reported in the result, not raised.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = sys.n
    if max_iter is None:
        max_iter = n
    diag = _regularized_diag(sys).real
    if diag.min() <= 0:
        raise SolverFailure("nonpositive diagonal; Jacobi preconditioner undefined")
    b = sys.rhs
    b_norm = np.linalg.norm(b)
    x = np.zeros(n, dtype=np.complex128)
    if b_norm == 0:
        return IterativeResult(x, 0, True, 0.0)
    shift = sys._shift()

    def matvec(v):
        y = sys.matvec(v)
        if shift:
            y += shift * v
        return y

    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = np.vdot(r, z).real
    rel = 1.0
    for k in range(1, max_iter + 1):
        ap = matvec(p)
        pap = np.vdot(p, ap).real
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = np.linalg.norm(r) / b_norm
        if rel < tol:
            return IterativeResult(x, k, True, float(rel))
        z = r / diag
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    return IterativeResult(x, max_iter, False, float(rel))


def solve_residual(sys: TridiagonalHermitianSystem, x: np.ndarray) -> float:
    """Relative infinity-norm residual of the regularized system."""
    r = sys.matvec(x) + sys._shift() * x - sys.rhs
    scale = np.abs(sys.rhs).max(initial=0.0)
    if scale == 0:
        scale = max(np.abs(x).max(initial=0.0), 1.0)
    return float(np.abs(r).max(initial=0.0) / scale)
