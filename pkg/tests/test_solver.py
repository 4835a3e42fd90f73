"""Tridiagonal system construction, Thomas solve, and baseline solvers."""

import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specinv import (
    SolverFailure,
    TridiagonalHermitianSystem,
    WeightFrame,
    Waveform,
    build_system,
    dense_solve_oracle,
    iterative_solve,
    make_weights,
    stft,
    thomas_solve,
)
from specinv.bench import random_system
from specinv.phase import ComplexRatios, fpd, tpd
from specinv.stft import AnalysisConfig


def dense_normal_equations(ratios, weights):
    """Oracle: materialize D and compute Lambda + D^H Gamma D densely."""
    n = weights.lambda_w.size
    d_mat = np.zeros((n - 1, n), dtype=complex)
    idx = np.arange(n - 1)
    d_mat[idx, idx] = -ratios.u_ratio
    d_mat[idx, idx + 1] = 1.0
    return np.diag(weights.lambda_w) + d_mat.conj().T @ np.diag(weights.gamma_w) @ d_mat


class TestBuildSystem:
    def test_worked_two_bin_example(self):
        ratios = ComplexRatios(np.array([1j]), np.ones(2, dtype=complex))
        weights = WeightFrame(np.ones(2), np.ones(1))
        sys = build_system(ratios, np.array([1.0, 0.0], dtype=complex), weights)
        np.testing.assert_allclose(sys.diag, [2.0, 2.0])
        np.testing.assert_allclose(sys.lower, [-1.0j])
        np.testing.assert_allclose(sys.upper, [1.0j])
        np.testing.assert_allclose(sys.to_dense(), [[2.0, 1.0j], [-1.0j, 2.0]])

    def test_matches_dense_normal_equations(self):
        rng = np.random.default_rng(0)
        for n in (2, 3, 8, 33):
            ratios = ComplexRatios(
                rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1),
                rng.standard_normal(n) + 1j * rng.standard_normal(n),
            )
            weights = WeightFrame(
                np.abs(rng.standard_normal(n)), np.abs(rng.standard_normal(n - 1))
            )
            sys = build_system(
                ratios, rng.standard_normal(n) + 1j * rng.standard_normal(n), weights
            )
            np.testing.assert_allclose(
                sys.to_dense(), dense_normal_equations(ratios, weights), atol=1e-12
            )

    def test_zero_gamma_gives_diagonal_time_propagation(self):
        rng = np.random.default_rng(1)
        n = 9
        ratios = ComplexRatios(
            rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1),
            np.exp(1j * rng.uniform(-np.pi, np.pi, n)),
        )
        weights = WeightFrame(np.ones(n), np.zeros(n - 1))
        prev = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        sys = build_system(ratios, prev, weights)
        assert np.all(sys.lower == 0)
        np.testing.assert_allclose(sys.diag, 1.0)
        # exact up to the 1e-12 regularization shift
        np.testing.assert_allclose(thomas_solve(sys), prev * ratios.v_ratio, rtol=1e-10)

    def test_zero_lambda_gives_zero_solution(self):
        rng = np.random.default_rng(2)
        n = 7
        ratios = ComplexRatios(
            rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1),
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
        )
        weights = WeightFrame(np.zeros(n), np.ones(n - 1))
        sys = build_system(ratios, np.ones(n, dtype=complex), weights)
        assert np.all(sys.rhs == 0)
        np.testing.assert_allclose(thomas_solve(sys), 0.0)

    def test_psd_certificate(self):
        for seed in range(20):
            n = int(np.random.default_rng(seed).integers(2, 65))
            sys = random_system(n, seed)
            a = sys.to_dense()
            eigs = np.linalg.eigvalsh(a)
            assert eigs.min() >= -1e-10 * np.abs(a).max()

    def test_length_mismatch(self):
        ratios = ComplexRatios(np.ones(3, dtype=complex), np.ones(4, dtype=complex))
        with pytest.raises(ValueError):
            build_system(ratios, np.ones(5, dtype=complex), WeightFrame(np.ones(4), np.ones(3)))


class TestWeightFrame:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            WeightFrame(np.array([1.0, -0.1]), np.array([1.0]))

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            WeightFrame(np.zeros(3), np.zeros(2))

    def test_schemes(self):
        prev, cur = np.array([1.0, 2.0, 4.0]), np.array([3.0, 5.0, 2.0])
        g = make_weights(prev, cur, "geometric")
        np.testing.assert_allclose(g.lambda_w, prev * cur)
        np.testing.assert_allclose(g.gamma_w, cur[:-1] * cur[1:])
        s = make_weights(prev, cur, "squared")
        np.testing.assert_allclose(s.lambda_w, cur * cur)
        u = make_weights(prev, cur, "uniform")
        np.testing.assert_allclose(u.lambda_w, 1.0)
        with pytest.raises(ValueError):
            make_weights(prev, cur, "exotic")


class TestSystemValidation:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            TridiagonalHermitianSystem(
                np.ones(3), np.array([1j, 1j]), np.array([1j, 1j]), np.zeros(3)
            )

    def test_rejects_complex_diag(self):
        with pytest.raises(ValueError, match="real"):
            TridiagonalHermitianSystem(
                np.array([1.0, 1j, 1.0]), np.zeros(2), np.zeros(2), np.zeros(3)
            )


class TestThomas:
    def test_identity(self):
        sys = TridiagonalHermitianSystem(
            np.ones(2), np.zeros(1), np.zeros(1), np.array([1.0 + 2.0j, 3.0])
        )
        np.testing.assert_allclose(thomas_solve(sys), [1.0 + 2.0j, 3.0])

    def test_two_by_two_closed_form(self):
        # A = [[2, i], [-i, 2]], b = (1, 0): det = 3, x = (2/3, i/3)
        sys = TridiagonalHermitianSystem(
            np.array([2.0, 2.0]), np.array([-1.0j]), np.array([1.0j]),
            np.array([1.0, 0.0], dtype=complex),
        )
        np.testing.assert_allclose(thomas_solve(sys), [2.0 / 3.0, 1.0j / 3.0], atol=1e-15)

    def test_zero_pivot_reported(self):
        sys = TridiagonalHermitianSystem(
            np.zeros(3), np.zeros(2), np.zeros(2), np.ones(3, dtype=complex)
        )
        with pytest.raises(SolverFailure, match="pivot"):
            thomas_solve(sys)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 80), st.integers(0, 10_000))
    def test_agrees_with_dense_oracle(self, n, seed):
        sys = random_system(n, seed)
        xt = thomas_solve(sys)
        xd = dense_solve_oracle(sys)
        scale = np.abs(xd).max()
        assert np.abs(xt - xd).max() <= 1e-9 * scale

    def test_large_sizes_against_oracle(self):
        for n in (512, 1024, 4097):
            sys = random_system(n, seed=n)
            xt = thomas_solve(sys)
            xd = dense_solve_oracle(sys)
            assert np.abs(xt - xd).max() <= 1e-9 * np.abs(xd).max()

    def test_scaling_equivariance(self):
        rng = np.random.default_rng(5)
        n = 33
        ratios = ComplexRatios(
            rng.standard_normal(n - 1) + 1j * rng.standard_normal(n - 1),
            rng.standard_normal(n) + 1j * rng.standard_normal(n),
        )
        lam = np.abs(rng.standard_normal(n))
        gam = np.abs(rng.standard_normal(n - 1))
        prev = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        x1 = thomas_solve(build_system(ratios, prev, WeightFrame(lam, gam)))
        c = np.pi
        x2 = thomas_solve(build_system(ratios, prev, WeightFrame(c * lam, c * gam)))
        assert np.abs(x1 - x2).max() < 1e-10 * np.abs(x1).max()

    def test_linear_memory(self):
        n = 4097
        sys = random_system(n, seed=3)
        thomas_solve(sys)  # warm the jit before tracing
        tracemalloc.start()
        thomas_solve(sys)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        # a handful of length-n complex vectors; far below the n^2 dense
        # footprint (n*n*16 bytes = 268 MB at this size)
        assert peak < 50 * n * 16

    def test_consistency_identity_true_frame_pair(self):
        cfg = AnalysisConfig(256, 64)
        rng = np.random.default_rng(11)
        spec = stft(Waveform(rng.standard_normal(4000)), cfg)
        mags, phases = spec.magnitudes(), spec.phases()
        tau = 9
        ratios_true = ComplexRatios(
            (mags[1:, tau] / mags[:-1, tau]) * np.exp(1j * fpd(phases, tau)),
            (mags[:, tau] / mags[:, tau - 1]) * np.exp(1j * tpd(phases, tau)),
        )
        truth = spec.data[:, tau]
        mask = mags[:, tau] > 1e-6 * mags.max()
        for scheme in ("geometric", "squared", "uniform"):
            weights = make_weights(mags[:, tau - 1], mags[:, tau], scheme)
            x = thomas_solve(build_system(ratios_true, spec.data[:, tau - 1], weights))
            rel = np.abs(x - truth)[mask] / np.abs(truth)[mask]
            assert rel.max() < 1e-8


class TestDenseOracle:
    def test_identity(self):
        sys = TridiagonalHermitianSystem(
            np.ones(2), np.zeros(1), np.zeros(1), np.array([1.0 + 2.0j, 3.0])
        )
        np.testing.assert_allclose(dense_solve_oracle(sys), [1.0 + 2.0j, 3.0])

    def test_singular_reported(self):
        sys = TridiagonalHermitianSystem(
            np.zeros(2), np.zeros(1), np.zeros(1), np.ones(2, dtype=complex)
        )
        with pytest.raises(SolverFailure):
            dense_solve_oracle(sys)


class TestIterative:
    def test_identity_one_iteration(self):
        sys = TridiagonalHermitianSystem(
            np.ones(4), np.zeros(3), np.zeros(3), np.arange(1, 5).astype(complex)
        )
        res = iterative_solve(sys)
        assert res.converged and res.iterations == 1
        np.testing.assert_allclose(res.x, sys.rhs)

    def test_diagonal_two_iterations(self):
        diag = np.array([1.0, 4.0, 9.0, 0.25])
        sys = TridiagonalHermitianSystem(
            diag, np.zeros(3), np.zeros(3), np.array([1.0, 2.0j, -3.0, 1.0 + 1.0j])
        )
        res = iterative_solve(sys)
        assert res.converged and res.iterations <= 2
        np.testing.assert_allclose(res.x, sys.rhs / diag, rtol=1e-8)

    def test_agreement_with_thomas(self):
        for seed in range(8):
            n = 50 + 40 * seed
            sys = random_system(n, seed)
            xt = thomas_solve(sys)
            res = iterative_solve(sys, tol=1e-8)
            assert res.converged
            assert np.abs(res.x - xt).max() < 1e-6 * np.abs(xt).max()

    def test_zero_rhs(self):
        sys = TridiagonalHermitianSystem(
            np.ones(3), np.zeros(2), np.zeros(2), np.zeros(3)
        )
        res = iterative_solve(sys)
        assert res.converged and res.iterations == 0
        assert np.all(res.x == 0)

    def test_rejects_bad_tol(self):
        sys = random_system(4, 0)
        with pytest.raises(ValueError):
            iterative_solve(sys, tol=0.0)
