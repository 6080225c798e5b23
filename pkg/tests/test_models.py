"""OLS, PLS1, LS-SVM, grid-search CV and NMSE."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spectral_ranges import models
from spectral_ranges.errors import UndefinedMetricError


class TestNmse:
    def test_perfect(self):
        y = np.arange(5.0)
        assert models.nmse(y, y) == 0.0

    def test_mean_predictor(self):
        y = np.random.default_rng(3).standard_normal(43)
        assert models.nmse(y, np.full(43, y.mean())) == pytest.approx(
            oracles.FROZEN["nmse_mean_predictor_q43"], rel=1e-12
        )

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        y, p = rng.standard_normal((2, 30))
        assert models.nmse(y, p) == pytest.approx(oracles.nmse(list(y), list(p)), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3), st.floats(-1e3, 1e3))
    def test_affine_invariance(self, a, b):
        rng = np.random.default_rng(1)
        y, p = rng.standard_normal((2, 20))
        assert models.nmse(a * y + b, a * p + b) == pytest.approx(models.nmse(y, p), rel=1e-12, abs=1e-12)

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            models.nmse([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedMetricError):
            models.nmse([1.0], [1.0])


class TestFolds:
    @pytest.mark.parametrize("n,sizes", [(172, [57, 57, 58]), (91, [30, 30, 31]), (9, [3, 3, 3])])
    def test_sizes(self, n, sizes):
        folds = models.contiguous_folds(n, 3)
        assert [len(f) for f in folds] == sizes
        np.testing.assert_array_equal(np.concatenate(folds), np.arange(n))

    def test_shuffled_partition(self):
        folds = models.make_folds(50, 3, shuffle=True, seed=4)
        assert sorted(np.concatenate(folds).tolist()) == list(range(50))
        assert [len(f) for f in folds] == [16, 17, 17]


class TestOls:
    def test_affine_target(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((20, 3))
        y = X @ [1.0, -2.0, 0.5] + 4.0
        m = models.fit_ols(X, y)
        assert np.max(np.abs(m.predict(X) - y)) < 1e-10

    def test_duplicate_column(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((15, 3))
        y = rng.standard_normal(15)
        a = models.fit_ols(X, y).predict(X)
        b = models.fit_ols(np.column_stack([X, X[:, 1]]), y).predict(np.column_stack([X, X[:, 1]]))
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_constant_feature(self):
        y = np.arange(6.0)
        m = models.fit_ols(np.ones((6, 1)), y)
        np.testing.assert_allclose(m.predict(np.ones((6, 1))), y.mean())

    def test_cv_infinite_when_underdetermined(self):
        X = np.random.default_rng(0).standard_normal((9, 8))
        assert np.isinf(models.cv_nmse_ols(X, np.arange(9.0), models.contiguous_folds(9, 3)))


class TestPlsr:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_full_rank_equals_ols(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((20, 5))
        y = rng.standard_normal(20)
        a = models.fit_plsr(X, y, 5).predict(X)
        b = models.fit_ols(X, y).predict(X)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_rank_one(self):
        rng = np.random.default_rng(2)
        X = np.outer(rng.standard_normal(12), rng.standard_normal(4))
        y = X @ [1.0, 2.0, 0.0, -1.0]
        m = models.fit_plsr(X, y, 1)
        assert np.max(np.abs(m.predict(X) - y)) < 1e-8

    def test_nesting(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((30, 8))
        y = rng.standard_normal(30)
        res = [np.sum((models.fit_plsr(X, y, a).predict(X) - y) ** 2) for a in range(1, 9)]
        assert all(res[i + 1] <= res[i] + 1e-10 for i in range(7))

    def test_truncation_flagged(self):
        rng = np.random.default_rng(4)
        X = np.outer(rng.standard_normal(12), rng.standard_normal(4))
        m = models.fit_plsr(X, X[:, 0], 3)
        assert m.truncated and m.n_components == 1

    def test_cv_tuning_prefers_true_rank(self):
        rng = np.random.default_rng(5)
        T = rng.standard_normal((60, 2))
        X = T @ rng.standard_normal((2, 10)) + 1e-3 * rng.standard_normal((60, 10))
        y = T @ [1.0, -1.0] + 1e-3 * rng.standard_normal(60)
        best, curve = models.cv_tune_plsr(X, y, models.contiguous_folds(60, 3), 6)
        assert best == 2 and len(curve) == 6


class TestLsSvm:
    def test_near_interpolation(self):
        x = np.linspace(-2, 2, 30)[:, None]
        y = np.sin(2 * x[:, 0]) + x[:, 0] ** 2
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = models.fit_lssvm(x, y, 1e8, 0.5)
        assert models.nmse(y, m.predict(x)) < 1e-6
        np.testing.assert_allclose(m.predict(x), y, rtol=1e-4, atol=1e-4 * np.abs(y).max())
        assert m.kkt_residual(y) < 1e-8

    def test_antisymmetric_bias(self):
        m = models.fit_lssvm([[1.0, 2.0], [-1.0, -2.0]], [3.0, -3.0], 10.0, 1.0)
        assert abs(m.bias) < 1e-10

    def test_planted_alpha(self):
        X, y, alpha, b = oracles.planted_rbf_expansion()
        m = models.fit_lssvm(X, y, 1e8, 1.5)
        np.testing.assert_allclose(m.alphas, alpha, atol=1e-3)
        assert m.bias == pytest.approx(b, abs=1e-3)

    def test_matches_dense_saddle_solve(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        m = models.fit_lssvm(X, y, 3.0, 1.2)
        b, a = oracles.lssvm_dense(X, y, 3.0, 1.2)
        assert m.bias == pytest.approx(b, abs=1e-10)
        np.testing.assert_allclose(m.alphas, a, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(models.DEFAULT_GAMMAS), st.sampled_from([0.3, 1.0, 3.0, 30.0]))
    def test_kkt_residual(self, seed, gamma, sigma):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((35, 4))
        y = X[:, 0] ** 2 + 0.1 * rng.standard_normal(35)
        m = models.fit_lssvm(X, y, gamma, sigma)
        assert m.kkt_residual(y) < 1e-8

    def test_kernel_symmetric_pd(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((25, 3))
        K = models.rbf_kernel(A, A, 1.0)
        assert np.max(np.abs(K - K.T)) < 1e-12
        np.linalg.cholesky(K + np.eye(25) / 100.0)

    def test_ill_conditioned_flag(self):
        x = np.linspace(0, 1, 40)[:, None]
        # the 1/gamma ridge bounds rcond from below, so gamma must be huge
        m = models.fit_lssvm(x, np.sin(x[:, 0]), 1e15, 50.0)
        assert m.warnings and m.rcond < models.ILL_CONDITIONED_RCOND


class TestCvTune:
    def test_eigen_route_matches_direct_fit(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((45, 2))
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(45)
        folds = models.contiguous_folds(45, 3)
        gammas, sigmas = (0.1, 10.0, 1000.0), (0.5, 2.0)
        res = models.cv_tune_lssvm(X, y, folds, gammas, sigmas)
        for i, g in enumerate(gammas):
            for j, s in enumerate(sigmas):
                direct = []
                for f in folds:
                    tr = np.setdiff1d(np.arange(45), f)
                    m = models.fit_lssvm(X[tr], y[tr], g, s)
                    direct.append(models.nmse(y[f], m.predict(X[f])))
                assert res.scores[i, j] == pytest.approx(np.mean(direct), rel=1e-6)

    def test_pure_noise(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((90, 3))
        y = rng.standard_normal(90)
        res = models.cv_tune_lssvm(X, y, 3)
        assert 0.9 < res.cv_nmse < 1.3

    def test_learnable_line(self):
        x = np.linspace(0, 1, 60)[:, None]
        res = models.cv_tune_lssvm(x, x[:, 0], models.make_folds(60, 3, shuffle=True, seed=0))
        assert res.cv_nmse < 0.01

    def test_ties_prefer_small_gamma_large_sigma(self):
        X = np.random.default_rng(0).standard_normal((12, 2))
        # every grid point gives the same mean-like prediction on a constant-free target
        y = np.array([0.0, 1.0] * 6)
        res = models.cv_tune_lssvm(X, y, 3, gammas=(1e-12, 2e-12), sigmas=(1e6, 2e6))
        assert res.gamma == 1e-12 and res.sigma == 2e6

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        X, y = rng.standard_normal((40, 2)), rng.standard_normal(40)
        a, b = models.cv_tune_lssvm(X, y, 3), models.cv_tune_lssvm(X, y, 3)
        assert (a.gamma, a.sigma, a.cv_nmse) == (b.gamma, b.sigma, b.cv_nmse)


def test_fit_report_round_trip():
    r = models.FitReport("lssvm", {"gamma": 1.0}, 3, 0.1, 0.2, 0.15, [[0, 9]], ["w"])
    assert models.FitReport.from_dict(r.to_dict()) == r
