import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from structpen import assemble_dataset, standardize


def random_dataset(rng, n=30, block_sizes=(10,), m=2, snr=1.0, density=0.3,
                   with_u=0):
    """Random standardized-ready dataset with a planted sparse signal."""
    blocks = [rng.standard_normal((n, p)) for p in block_sizes]
    X = np.hstack(blocks)
    p = X.shape[1]
    B = np.zeros((p, m))
    mask = rng.random((p, m)) < density
    B[mask] = rng.standard_normal(mask.sum()) * snr
    Y = X @ B + rng.standard_normal((n, m))
    U = rng.standard_normal((n, with_u)) if with_u else None
    return assemble_dataset(Y, blocks, U=U)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def std_dataset(rng, **kwargs):
    ds = random_dataset(rng, **kwargs)
    ds_std, _ = standardize(ds)
    return ds_std


def assert_kkt(ds, fit, lam, alpha=1.0, tol=1e-6):
    """Independent KKT certificate for an elastic-net family fit.

    Zero coefficients: |X_j' R_k| / (mn) <= lam * alpha + tol.
    Active coefficients: the stationarity residual vanishes to tol.
    """
    B = fit.coef_matrix()
    R = ds.Y - fit.beta0[None, :] - ds.X @ B
    G = ds.X.T @ R / (ds.m * ds.n)
    zero = B == 0
    live_cols = (ds.X * ds.X).sum(axis=0) > 0
    zero_ok = zero & live_cols[:, None]
    if zero_ok.any():
        worst = np.abs(G[zero_ok]).max() - lam * alpha
        assert worst <= tol, f"inactive KKT violated by {worst:.3e}"
    if (~zero).any():
        stat = G - lam * alpha * np.sign(B) - lam * (1 - alpha) * B
        worst = np.abs(stat[~zero]).max()
        assert worst <= tol, f"active KKT violated by {worst:.3e}"


def assert_monotone_trace(trace, slack=0.0):
    trace = np.asarray(trace)
    if trace.size < 2:
        return
    jumps = np.diff(trace)
    limit = slack + 1e-10 * np.maximum(np.abs(trace[:-1]), 1.0)
    assert (jumps <= limit).all(), (
        f"objective trace increased by {jumps.max():.3e}"
    )
