import numpy as np
import pytest

from structpen import (assemble_dataset, destandardize_fit, fit_lasso, predict,
                       standardize)
from structpen.data import FitResult, read_matrix_csv, write_matrix_csv
from structpen.errors import ConfigError

from conftest import random_dataset


class TestAssemble:
    def test_shape_bookkeeping(self):
        Y = np.arange(8.0).reshape(4, 2)
        ds = assemble_dataset(Y, [np.ones((4, 3)), np.zeros((4, 2))])
        assert (ds.n, ds.m, ds.n_blocks, ds.p) == (4, 2, 2, 5)
        assert ds.offsets.tolist() == [0, 3, 5]

    def test_dimension_mismatch(self):
        Y = np.zeros((4, 2))
        with pytest.raises(ConfigError, match="rows"):
            assemble_dataset(Y, [np.zeros((5, 3))])

    def test_nan_reported_with_position(self):
        Y = np.zeros((4, 2))
        Y[2, 1] = np.nan
        with pytest.raises(ConfigError, match="row 3, column 2"):
            assemble_dataset(Y, [np.zeros((4, 3))])

    def test_empty_block_rejected(self):
        with pytest.raises(ConfigError):
            assemble_dataset(np.zeros((4, 2)), [np.zeros((4, 0))])
        with pytest.raises(ConfigError):
            assemble_dataset(np.zeros((4, 2)), [])

    def test_block_offsets_partition_features(self, rng):
        ds = random_dataset(rng, n=12, block_sizes=(3, 4, 5))
        seen = np.zeros(ds.p, dtype=int)
        for s in range(ds.n_blocks):
            lo, hi = ds.offsets[s], ds.offsets[s + 1]
            seen[lo:hi] += 1
        assert (seen == 1).all()

    def test_arrays_are_read_only(self, rng):
        ds = random_dataset(rng)
        with pytest.raises(ValueError):
            ds.X[0, 0] = 1.0


class TestStandardize:
    def test_unit_variance_column(self):
        ds = assemble_dataset(np.zeros((3, 1)), [np.array([[1.0], [2.0], [3.0]])])
        out, stdz = standardize(ds)
        assert abs(out.X[:, 0].mean()) < 1e-15
        assert abs(out.X[:, 0].std(ddof=1) - 1.0) < 1e-12
        assert stdz.feature_sds[0] == 1.0  # sd of (1,2,3) is exactly 1

    def test_constant_column_flagged_and_centered(self):
        X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
        ds = assemble_dataset(np.zeros((3, 1)), [X])
        with pytest.warns(UserWarning, match="zero-variance"):
            out, stdz = standardize(ds)
        assert np.allclose(out.X[:, 0], 0.0)
        assert stdz.constant_features.tolist() == [True, False]
        assert stdz.feature_sds[0] == 1.0

    def test_round_trip_predictions(self, rng):
        ds = random_dataset(rng, n=20, block_sizes=(8,), m=3)
        ds_std, stdz = standardize(ds)
        fit = fit_lasso(ds_std, 0.05)
        fit_orig = destandardize_fit(fit, stdz)
        pred_std = (fit.beta0[None, :] + ds_std.X @ fit.coef_matrix()
                    + stdz.response_means)
        pred_orig = predict(fit_orig, ds.X)
        scale = np.abs(pred_orig).max()
        assert np.abs(pred_std - pred_orig).max() <= 1e-10 * max(scale, 1.0)

    def test_round_trip_with_scaled_y(self, rng):
        ds = random_dataset(rng, n=25, block_sizes=(6,), m=2)
        ds_std, stdz = standardize(ds, scale_y=True)
        fit = fit_lasso(ds_std, 0.03)
        fit_orig = destandardize_fit(fit, stdz)
        pred_std = (fit.beta0[None, :] + ds_std.X @ fit.coef_matrix())
        pred_std = pred_std * stdz.response_sds[None, :] + stdz.response_means
        assert np.allclose(predict(fit_orig, ds.X), pred_std, atol=1e-10)

    def test_block_opt_out(self, rng):
        ds = random_dataset(rng, n=15, block_sizes=(3, 3))
        out, stdz = standardize(ds, scale_block=[True, False])
        assert np.allclose(stdz.feature_sds[3:], 1.0)
        assert not np.allclose(stdz.feature_sds[:3], 1.0)

    def test_u_centered_never_scaled(self, rng):
        ds = random_dataset(rng, n=15, with_u=2)
        out, stdz = standardize(ds)
        assert np.allclose(out.U.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out.U * 1.0, ds.U - ds.U.mean(axis=0))


class TestFitResultStorage:
    def test_no_zero_triplets(self):
        B = np.array([[0.0, 1.5], [0.0, 0.0], [-2.0, 0.0]])
        fr = FitResult.from_dense(B, beta0=np.zeros(2))
        assert fr.n_nonzero == 2
        assert (fr.B_vals != 0).all()
        assert np.allclose(fr.coef_matrix(), B)

    def test_json_round_trip(self, rng):
        B = rng.standard_normal((4, 3)) * (rng.random((4, 3)) < 0.5)
        fr = FitResult.from_dense(B, beta0=rng.standard_normal(3),
                                  objective_trace=[3.0, 2.0], n_iter=2)
        back = FitResult.from_dict(fr.to_dict())
        assert np.allclose(back.coef_matrix(), B)
        assert np.allclose(back.beta0, fr.beta0)
        assert back.n_iter == 2


class TestMatrixCsv:
    def test_round_trip(self, tmp_path, rng):
        vals = rng.standard_normal((3, 2))
        write_matrix_csv(tmp_path / "m.csv", vals, ["r1", "r2", "r3"], ["a", "b"])
        df = read_matrix_csv(tmp_path / "m.csv")
        assert np.allclose(df.to_numpy(), vals)
        assert list(df.columns) == ["a", "b"]

    def test_missing_value_is_fatal(self, tmp_path):
        (tmp_path / "m.csv").write_text("id,a,b\nr1,1.0,\nr2,2.0,3.0\n")
        with pytest.raises(ConfigError, match="missing value"):
            read_matrix_csv(tmp_path / "m.csv")
