import math
from dataclasses import replace

import numpy as np
import pytest

from fmcb.factorize import (
    FactorizationError,
    RankOneFactors,
    SalsConfig,
    exact_rank_one_oracle,
    factorization_quality,
    sals_rank_one,
)


def jacobi_eigenvalues(sym: np.ndarray, sweeps: int = 100, tol: float = 1e-14) -> np.ndarray:
    """Classic cyclic Jacobi rotations on a small symmetric matrix.

    Independent of both numpy's LAPACK bindings and the power-iteration
    oracle; used only to cross-check singular values.
    """
    a = sym.copy().astype(np.float64)
    n = a.shape[0]
    for _ in range(sweeps):
        off = math.sqrt(sum(a[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, np.abs(np.diag(a)).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = 0.5 * math.atan2(2 * a[p, q], a[q, q] - a[p, p])
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def gapped_matrix(rng, m, n, gap):
    """Random matrix whose top two singular values are a factor `gap` apart."""
    a = rng.standard_normal((m, n))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    s[1:] *= s[0] / (gap * s[1])
    return (u * s) @ vt, s


class TestExactOracle:
    def test_diagonal(self):
        o = exact_rank_one_oracle(np.diag([3.0, 1.0]))
        assert o.sigma1 == pytest.approx(3.0)
        assert o.sigma2 == pytest.approx(1.0)
        assert np.allclose(o.b, [1.0, 0.0], atol=1e-10)
        assert np.allclose(o.r, [3.0, 0.0], atol=1e-10)

    def test_rank_one_by_construction(self):
        o = exact_rank_one_oracle(np.outer([1.0, 2.0], [0.6, 0.8]))
        assert o.sigma1 == pytest.approx(math.sqrt(5.0))
        assert o.sigma2 == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(o.b, [0.6, 0.8])

    def test_identity_is_degenerate_but_handled(self):
        o = exact_rank_one_oracle(np.eye(2))
        assert o.sigma1 == pytest.approx(1.0)
        assert o.sigma2 == pytest.approx(1.0)

    def test_matches_jacobi_eigensolver(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a = rng.standard_normal((50, 5))
            o = exact_rank_one_oracle(a)
            eigs = jacobi_eigenvalues(a.T @ a)
            assert o.sigma1 ** 2 == pytest.approx(eigs[0], rel=1e-9)
            assert o.sigma2 ** 2 == pytest.approx(eigs[1], rel=1e-9, abs=1e-9)

    def test_sign_canonicalization(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((20, 4))
        o = exact_rank_one_oracle(a)
        assert o.b[np.argmax(np.abs(o.b))] > 0


class TestSals:
    def test_exact_rank_one_recovery(self):
        rng = np.random.default_rng(2)
        b0 = rng.standard_normal(8)
        b0 /= np.linalg.norm(b0)
        r0 = rng.standard_normal(100) * 3
        a = np.outer(r0, b0)
        f = sals_rank_one(a, SalsConfig(seed=5))
        residual = np.linalg.norm(a - np.outer(f.r, f.b)) / np.linalg.norm(a)
        assert residual <= 1e-4
        assert abs(f.b @ b0) >= 0.9999

    def test_identity_degenerate(self):
        f = sals_rank_one(np.eye(2), SalsConfig(seed=0))
        residual = np.linalg.norm(np.eye(2) - np.outer(f.r, f.b))
        assert residual == pytest.approx(1.0, abs=1e-6)

    def test_oracle_agreement_with_spectral_gap(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            a, _ = gapped_matrix(rng, 1000, 20, gap=2.0)
            f = sals_rank_one(a, SalsConfig(seed=seed))
            o = exact_rank_one_oracle(a)
            assert abs(f.b @ o.b) >= 0.999

    def test_residual_near_optimal_on_small_instances(self):
        # Eckart-Young: the best rank-one residual is sqrt(sum sigma_i^2 - sigma_1^2),
        # known here because the spectrum is imposed at construction. Tiny
        # matrices offer few updates per epoch, so the run gets a generous
        # epoch budget and a tight exit tolerance.
        rng = np.random.default_rng(4)
        config = SalsConfig(step_size=0.02, max_epochs=4000, tolerance=1e-9)
        for _ in range(50):
            m = int(rng.integers(2, 31))
            n = int(rng.integers(2, 7))
            a, s = gapped_matrix(rng, m, n, gap=1.5)
            f = sals_rank_one(a, replace(config, seed=int(rng.integers(1 << 30))))
            optimal = math.sqrt(max((s[1:] ** 2).sum(), 0.0))
            achieved = np.linalg.norm(a - np.outer(f.r, f.b))
            assert achieved <= 1.01 * optimal + 1e-12

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((60, 6))
        base = sals_rank_one(a, SalsConfig(seed=9))
        for c in (1e-6, 0.5, 3.0, 1e7):
            scaled = sals_rank_one(c * a, SalsConfig(seed=9))
            assert np.allclose(scaled.b, base.b, atol=1e-6)
            assert np.allclose(scaled.r, c * base.r, rtol=1e-6)

    def test_touch_counter_matches_sampling_fraction(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((100, 8))
        f = sals_rank_one(a, SalsConfig(seed=1, row_sample_fraction=0.5))
        assert f.stats.rows_per_epoch == 50
        assert f.stats.touches_per_epoch == 50 * 8
        assert f.stats.entry_touches == (f.stats.epochs + f.stats.redone_epochs) * 50 * 8
        full = sals_rank_one(a, SalsConfig(seed=1))
        assert full.stats.touches_per_epoch == 100 * 8

    def test_unit_norm_output(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.standard_normal((rng.integers(1, 40), rng.integers(1, 9)))
            f = sals_rank_one(a, SalsConfig(seed=3))
            assert abs(np.linalg.norm(f.b) - 1.0) <= 1e-9
            assert f.b[np.argmax(np.abs(f.b))] > 0

    def test_warm_start_converges_faster(self):
        rng = np.random.default_rng(8)
        a, _ = gapped_matrix(rng, 500, 10, gap=3.0)
        cold = sals_rank_one(a, SalsConfig(seed=11))
        warm = sals_rank_one(a, SalsConfig(seed=11), v0=cold.b)
        assert warm.stats.epochs <= cold.stats.epochs
        assert abs(warm.b @ cold.b) >= 0.99999

    def test_zero_matrix_rejected(self):
        with pytest.raises(FactorizationError, match="zero matrix"):
            sals_rank_one(np.zeros((4, 3)))

    def test_non_finite_rejected(self):
        a = np.ones((3, 3))
        a[1, 1] = np.inf
        with pytest.raises(FactorizationError, match="non-finite"):
            sals_rank_one(a)

    def test_single_column_is_exact(self):
        rng = np.random.default_rng(9)
        col = rng.standard_normal((30, 1))
        f = sals_rank_one(col, SalsConfig(seed=0))
        assert f.b[0] == 1.0
        assert np.array_equal(f.r, col[:, 0])


class TestFactorizationQuality:
    def test_exact_factors(self):
        rng = np.random.default_rng(10)
        b = rng.standard_normal(5)
        b /= np.linalg.norm(b)
        if b[np.argmax(np.abs(b))] < 0:
            b = -b
        r = rng.standard_normal(40)
        a = np.outer(r, b)
        q = factorization_quality(a, RankOneFactors(r=r, b=b))
        assert q.residual_ratio <= 1e-12
        assert q.energy_fraction == pytest.approx(1.0)
        assert q.sigma_ratio == math.inf

    def test_identity_splits_energy(self):
        factors = RankOneFactors(r=np.array([1.0, 0.0]), b=np.array([1.0, 0.0]))
        q = factorization_quality(np.eye(2), factors)
        assert q.energy_fraction == pytest.approx(0.5)
        assert q.sigma_ratio == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        factors = RankOneFactors(r=np.ones(3), b=np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="does not match"):
            factorization_quality(np.eye(4), factors)

    def test_residual_energy_identity(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((30, 6))
        f = sals_rank_one(a, SalsConfig(seed=2))
        q = factorization_quality(a, f)
        assert q.residual_ratio ** 2 + q.energy_fraction == pytest.approx(1.0)


def test_rank_one_factors_validation():
    with pytest.raises(ValueError, match="unit-norm"):
        RankOneFactors(r=np.ones(2), b=np.array([2.0, 0.0]))
    with pytest.raises(ValueError, match="sign"):
        RankOneFactors(r=np.ones(2), b=np.array([0.0, -1.0]))
