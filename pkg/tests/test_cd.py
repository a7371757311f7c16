import numpy as np
import pytest

from structpen import (CdOptions, assemble_dataset, fit_elastic_net, fit_lasso,
                       fit_path, lambda_max, make_path, soft_threshold,
                       standardize)
from structpen.errors import ConfigError

from conftest import assert_kkt, assert_monotone_trace, random_dataset, std_dataset


class TestSoftThreshold:
    @pytest.mark.parametrize("z,g,expected", [(3, 1, 2), (-0.5, 1, 0), (-3, 1, -2),
                                              (0, 0, 0), (2.5, 0, 2.5)])
    def test_values(self, z, g, expected):
        assert soft_threshold(z, g) == expected


class TestLambdaMax:
    def test_zero_column(self):
        ds = assemble_dataset(np.array([[1.0], [-1.0]]), [np.zeros((2, 1))])
        assert lambda_max(ds) == 0.0

    def test_hand_value(self):
        ds = assemble_dataset(np.array([[1.0], [-1.0]]),
                              [np.array([[1.0], [-1.0]])])
        assert lambda_max(ds) == pytest.approx(1.0)

    def test_boundary_shutoff(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(10,), m=2)
        lam = lambda_max(ds)
        assert fit_lasso(ds, lam).n_nonzero == 0
        assert fit_lasso(ds, 0.99 * lam).n_nonzero >= 1

    def test_alpha_scaling_and_ridge_error(self, rng):
        ds = std_dataset(rng, n=20, block_sizes=(5,))
        assert lambda_max(ds, alpha=0.5) == pytest.approx(2 * lambda_max(ds))
        with pytest.raises(ConfigError):
            lambda_max(ds, alpha=0.0)


class TestMakePath:
    def test_three_points(self):
        path = make_path(1.0, 3, 0.01)
        assert np.allclose(path.lambdas, [1.0, 0.1, 0.01])

    def test_two_points(self):
        assert np.allclose(make_path(2.0, 2, 0.5).lambdas, [2.0, 1.0])

    def test_constant_ratio(self):
        path = make_path(3.7, 100, 0.01)
        ratios = path.lambdas[1:] / path.lambdas[:-1]
        assert np.abs(ratios - ratios[0]).max() < 1e-12

    def test_invalid(self):
        with pytest.raises(ConfigError):
            make_path(-1.0, 10, 0.01)
        with pytest.raises(ConfigError):
            make_path(1.0, 1, 0.01)
        with pytest.raises(ConfigError):
            make_path(1.0, 10, 1.5)


class TestFitLasso:
    def test_above_lambda_max_gives_null_model(self, rng):
        ds = random_dataset(rng, n=25, block_sizes=(8,), m=3)  # not centered
        lam = lambda_max(ds)
        fit = fit_lasso(ds, lam * 1.01)
        assert fit.n_nonzero == 0
        assert np.allclose(fit.beta0, ds.Y.mean(axis=0))

    def test_orthonormal_closed_form(self, rng):
        n, p = 32, 8
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = Q * np.sqrt(n)  # X'X = n I
        beta = np.concatenate([rng.standard_normal(4), np.zeros(4)])
        Y = (X @ beta + 0.1 * rng.standard_normal(n)).reshape(-1, 1)
        Y -= Y.mean()
        ds = assemble_dataset(Y, [X])
        lam = 0.5 * lambda_max(ds)
        fit = fit_lasso(ds, lam, opts=CdOptions(tol=1e-12))
        expected = np.array([soft_threshold(X[:, j] @ Y[:, 0] / n, lam)
                             for j in range(p)])
        assert np.abs(fit.coef_matrix()[:, 0] - expected).max() < 1e-10

    def test_kkt_certificate_random_problem(self, rng):
        ds = std_dataset(rng, n=40, block_sizes=(25,), m=3)
        lam = 0.3 * lambda_max(ds)
        fit = fit_lasso(ds, lam, opts=CdOptions(tol=1e-9))
        assert_kkt(ds, fit, lam, tol=1e-6)
        # active coefficients sit exactly on the boundary |X'R|/(mn) = lam
        B = fit.coef_matrix()
        R = ds.Y - fit.beta0[None, :] - ds.X @ B
        G = ds.X.T @ R / (ds.m * ds.n)
        active = B != 0
        assert np.abs(np.abs(G[active]) - lam).max() < 1e-6

    def test_objective_trace_non_increasing(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(12,), m=2)
        fit = fit_lasso(ds, 0.1 * lambda_max(ds))
        assert_monotone_trace(fit.objective_trace)

    def test_non_convergence_flag(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(20,), m=2)
        fit = fit_lasso(ds, 1e-4 * lambda_max(ds),
                        opts=CdOptions(tol=1e-14, max_sweeps=2))
        assert not fit.converged

    def test_zero_variance_column_coefficient_zero(self, rng):
        X = rng.standard_normal((20, 4))
        X[:, 2] = 7.0
        Y = rng.standard_normal((20, 2))
        ds = assemble_dataset(Y, [X])
        with pytest.warns(UserWarning):
            ds_std, _ = standardize(ds)
        fit = fit_lasso(ds_std, 1e-4)
        assert np.all(fit.coef_matrix()[2] == 0.0)


class TestFitElasticNet:
    def test_alpha_one_equals_lasso(self, rng):
        ds = std_dataset(rng, n=25, block_sizes=(10,), m=2)
        lam = 0.2 * lambda_max(ds)
        a = fit_lasso(ds, lam).coef_matrix()
        b = fit_elastic_net(ds, lam, 1.0).coef_matrix()
        assert np.abs(a - b).max() <= 1e-10

    def test_shutoff_at_scaled_lambda_max(self, rng):
        ds = std_dataset(rng, n=25, block_sizes=(10,), m=2)
        # a whisker above the boundary: at exact equality the zero update is
        # decided by the last ulp of two different summation orders
        lam = lambda_max(ds, alpha=0.6) * (1 + 1e-9)
        assert fit_elastic_net(ds, lam, 0.6).n_nonzero == 0

    def test_row_augmentation_identity(self, rng):
        # EN fit == l1-only fit on the row-augmented system
        n, p, m = 20, 10, 2
        ds = std_dataset(rng, n=n, block_sizes=(p,), m=m)
        lam, alpha = 0.08, 0.5
        direct = fit_elastic_net(ds, lam, alpha, opts=CdOptions(tol=1e-12))
        Xa = np.vstack([ds.X, np.sqrt(m * n * lam * (1 - alpha)) * np.eye(p)])
        Ya = np.vstack([ds.Y - ds.Y.mean(axis=0), np.zeros((p, m))])
        ds_aug = assemble_dataset(Ya, [Xa])
        lam_aug = lam * alpha * n / (n + p)
        aug = fit_lasso(ds_aug, lam_aug, opts=CdOptions(tol=1e-12))
        assert np.abs(direct.coef_matrix() - aug.coef_matrix()).max() <= 1e-6

    def test_alpha_zero_is_ridge(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(5,), m=1)
        lam = 0.1
        fit = fit_elastic_net(ds, lam, 0.0, opts=CdOptions(tol=1e-12))
        mn = ds.m * ds.n
        ridge = np.linalg.solve(ds.X.T @ ds.X / mn + lam * np.eye(5),
                                ds.X.T @ (ds.Y - ds.Y.mean(0)) / mn)
        assert np.abs(fit.coef_matrix() - ridge).max() < 1e-8

    def test_alpha_out_of_range(self, rng):
        ds = std_dataset(rng, n=10, block_sizes=(3,))
        with pytest.raises(ConfigError):
            fit_elastic_net(ds, 0.1, 1.5)


class TestFitPath:
    def test_first_entry_is_null(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(10,), m=2)
        path = make_path(lambda_max(ds), 10, 0.05)
        fits = fit_path(ds, path)
        assert fits[0].n_nonzero == 0

    def test_nonzeros_monotone_on_orthonormal_design(self, rng):
        n, p = 64, 16
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        X = Q * np.sqrt(n)
        Y = (X[:, :6] @ rng.standard_normal(6) + rng.standard_normal(n)).reshape(-1, 1)
        Y -= Y.mean()
        ds = assemble_dataset(Y, [X])
        fits = fit_path(ds, make_path(lambda_max(ds), 20, 0.01))
        nnz = [f.n_nonzero for f in fits]
        assert all(a <= b for a, b in zip(nnz, nnz[1:]))

    def test_warm_start_saves_sweeps(self, rng):
        ds = std_dataset(rng, n=100, block_sizes=(200,), m=24, density=0.05)
        path = make_path(lambda_max(ds), 12, 0.05)
        warm_sweeps = sum(f.n_iter for f in fit_path(ds, path))
        cold_sweeps = sum(fit_lasso(ds, lam).n_iter for lam in path.lambdas)
        assert warm_sweeps < cold_sweeps

    def test_kkt_along_path(self, rng):
        ds = std_dataset(rng, n=40, block_sizes=(15, 10), m=3)
        path = make_path(lambda_max(ds), 8, 0.05)
        for lam, fit in zip(path.lambdas, fit_path(ds, path)):
            assert_kkt(ds, fit, lam, tol=1e-6)
            assert_monotone_trace(fit.objective_trace)


class TestEquivariance:
    def test_feature_permutation(self, rng):
        ds = std_dataset(rng, n=30, block_sizes=(12,), m=2)
        lam = 0.15 * lambda_max(ds)
        base = fit_lasso(ds, lam).coef_matrix()
        perm = rng.permutation(12)
        ds_perm = assemble_dataset(ds.Y, [ds.X[:, perm]])
        # sweep in an order that replays the original arithmetic exactly
        order = tuple(int(np.flatnonzero(perm == j)[0]) for j in range(12))
        fit_p = fit_lasso(ds_perm, lam, opts=CdOptions(feature_order=order))
        assert np.array_equal(base[perm], fit_p.coef_matrix())

    def test_response_scaling_single_response(self, rng):
        # power-of-two scaling is exact in floating point
        ds = std_dataset(rng, n=25, block_sizes=(8,), m=1)
        lam = 0.2 * lambda_max(ds)
        base = fit_lasso(ds, lam)
        ds2 = assemble_dataset(2.0 * ds.Y, [ds.X])
        doubled = fit_lasso(ds2, 2.0 * lam)
        assert np.array_equal(doubled.coef_matrix(), 2.0 * base.coef_matrix())
        assert np.array_equal(doubled.beta0, 2.0 * base.beta0)
