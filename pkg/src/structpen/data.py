"""Core data model: responses, ordered feature blocks, fits, standardization.

All solvers share these containers. A ``Dataset`` is immutable after
construction (arrays are marked read-only) and safe to share across
concurrent fits.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError

METHODS = (
    "lasso",
    "elastic_net",
    "ipf_lasso",
    "sipf_elastic_net",
    "ipf_elastic_net",
    "tree_lasso",
    "ipf_tree_lasso",
)
EN_METHODS = ("elastic_net", "sipf_elastic_net", "ipf_elastic_net")
TREE_METHODS = ("tree_lasso", "ipf_tree_lasso")
IPF_METHODS = ("ipf_lasso", "sipf_elastic_net", "ipf_elastic_net", "ipf_tree_lasso")


def _check_matrix(name, a):
    arr = np.array(a, dtype=float, order="F")
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ConfigError(f"{name} is empty (shape {arr.shape})")
    if not np.isfinite(arr).all():
        i, j = np.argwhere(~np.isfinite(arr))[0]
        raise ConfigError(
            f"{name} has a non-finite entry at row {i + 1}, column {j + 1}"
        )
    return arr


def _freeze(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Response matrix, concatenated penalized features and optional unpenalized block.

    ``X`` stores the S feature blocks side by side (Fortran order, read-only);
    ``block_sizes`` records the p_s so block boundaries are recoverable.
    """

    Y: np.ndarray
    X: np.ndarray
    block_sizes: tuple[int, ...]
    U: np.ndarray | None = None
    row_ids: tuple[str, ...] | None = None
    y_ids: tuple[str, ...] | None = None
    x_ids: tuple[str, ...] | None = None
    u_ids: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    @property
    def offsets(self) -> np.ndarray:
        """Cumulative block offsets, length S+1; block s spans offsets[s]:offsets[s+1]."""
        return np.concatenate([[0], np.cumsum(self.block_sizes)])

    def block(self, s: int) -> np.ndarray:
        off = self.offsets
        return self.X[:, off[s]:off[s + 1]]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(s) for s in range(self.n_blocks)]

    def block_of_feature(self) -> np.ndarray:
        """Block index for every feature column (length p)."""
        return np.repeat(np.arange(self.n_blocks), self.block_sizes)

    def subset_rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return assemble_dataset(
            self.Y[idx],
            [b[idx] for b in self.blocks],
            U=self.U[idx] if self.U is not None else None,
            row_ids=tuple(np.asarray(self.row_ids)[idx]) if self.row_ids else None,
            y_ids=self.y_ids,
            x_ids=self.x_ids,
            u_ids=self.u_ids,
        )

    def with_responses(self, Y: np.ndarray) -> "Dataset":
        Y = _freeze(np.array(Y, dtype=float))
        if Y.shape != self.Y.shape:
            raise ConfigError("replacement Y has a different shape")
        return replace(self, Y=Y)


def assemble_dataset(Y, blocks, U=None, row_ids=None, y_ids=None, x_ids=None,
                     u_ids=None) -> Dataset:
    """Validate shapes/finiteness and build a Dataset with recorded block boundaries."""
    Y = _check_matrix("Y", Y)
    if not blocks:
        raise ConfigError("at least one feature block is required")
    mats = []
    for s, b in enumerate(blocks):
        b = _check_matrix(f"X block {s + 1}", b)
        if b.shape[0] != Y.shape[0]:
            raise ConfigError(
                f"X block {s + 1} has {b.shape[0]} rows but Y has {Y.shape[0]}"
            )
        mats.append(b)
    if Y.shape[0] < 2:
        raise ConfigError("need at least 2 samples")
    X = np.asfortranarray(np.hstack(mats))
    if U is not None:
        U = _check_matrix("U", U)
        if U.shape[0] != Y.shape[0]:
            raise ConfigError(f"U has {U.shape[0]} rows but Y has {Y.shape[0]}")
        _freeze(U)
    return Dataset(
        Y=_freeze(Y),
        X=_freeze(X),
        block_sizes=tuple(b.shape[1] for b in mats),
        U=U,
        row_ids=tuple(row_ids) if row_ids is not None else None,
        y_ids=tuple(y_ids) if y_ids is not None else None,
        x_ids=tuple(x_ids) if x_ids is not None else None,
        u_ids=tuple(u_ids) if u_ids is not None else None,
    )


@dataclass(frozen=True)
class Standardization:
    """Inverse-transform data recorded by standardize()."""

    feature_means: np.ndarray
    feature_sds: np.ndarray          # effective divisors; 1.0 where unscaled
    response_means: np.ndarray
    response_sds: np.ndarray         # 1.0 unless scale_y
    u_means: np.ndarray | None
    constant_features: np.ndarray    # bool mask, length p
    centered_y: bool
    scaled_x: bool
    scaled_y: bool


def standardize(ds: Dataset, center_y: bool = True, scale_x: bool = True,
                scale_y: bool = False, scale_block=None) -> tuple[Dataset, Standardization]:
    """Center/scale a dataset for fitting.

    Penalized feature columns are centered and (if ``scale_x``) scaled to unit
    sample standard deviation; ``scale_block`` (sequence of bool per block)
    opts individual blocks out of scaling, e.g. to keep binary mutation coding.
    Y columns are centered if ``center_y`` (scaled only if ``scale_y``). The
    unpenalized block U is centered, never scaled. Zero-variance columns are
    flagged, centered and left unscaled with a warning.
    """
    X = np.array(ds.X, order="F")
    means = X.mean(axis=0)
    X -= means
    col_sd = X.std(axis=0, ddof=1)
    constant = col_sd == 0
    sds = np.ones(ds.p)
    if scale_x:
        want = np.ones(ds.p, dtype=bool)
        if scale_block is not None:
            if len(scale_block) != ds.n_blocks:
                raise ConfigError("scale_block must have one flag per block")
            want = np.repeat(np.asarray(scale_block, dtype=bool), ds.block_sizes)
        sds = np.where(want & ~constant, col_sd, 1.0)
        X /= sds
    if scale_x and constant.any():
        cols = np.flatnonzero(constant) + 1
        warnings.warn(
            f"zero-variance feature column(s) {cols.tolist()} left unscaled; "
            "their coefficients are forced to zero",
            stacklevel=2,
        )
    Y = np.array(ds.Y)
    y_means = Y.mean(axis=0) if center_y else np.zeros(ds.m)
    Y = Y - y_means
    y_sds = np.ones(ds.m)
    if scale_y:
        sd = Y.std(axis=0, ddof=1)
        if (sd == 0).any():
            warnings.warn("constant response column left unscaled", stacklevel=2)
        y_sds = np.where(sd > 0, sd, 1.0)
        Y = Y / y_sds
    U = None
    u_means = None
    if ds.U is not None:
        u_means = ds.U.mean(axis=0)
        U = _freeze(ds.U - u_means)
    off = ds.offsets
    out = Dataset(
        Y=_freeze(Y),
        X=_freeze(np.asfortranarray(X)),
        block_sizes=ds.block_sizes,
        U=U,
        row_ids=ds.row_ids,
        y_ids=ds.y_ids,
        x_ids=ds.x_ids,
        u_ids=ds.u_ids,
    )
    stdz = Standardization(
        feature_means=_freeze(means),
        feature_sds=_freeze(sds),
        response_means=_freeze(y_means),
        response_sds=_freeze(y_sds),
        u_means=_freeze(u_means) if u_means is not None else None,
        constant_features=_freeze(constant),
        centered_y=center_y,
        scaled_x=scale_x,
        scaled_y=scale_y,
    )
    return out, stdz


@dataclass(frozen=True)
class PenaltyConfig:
    """Method selector plus every penalty parameter.

    ``ratios`` are the per-block multipliers lambda_s / lambda_1 (first entry
    must be 1); ``alphas`` is a single shared value or one per block for the
    elastic-net family; ``rho_star`` is the tree pruning threshold.
    """

    method: str
    lambda1: float
    ratios: tuple[float, ...] | None = None
    alphas: tuple[float, ...] | None = None
    rho_star: float = 0.95

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if not (np.isfinite(self.lambda1) and self.lambda1 > 0):
            raise ConfigError("lambda1 must be a positive finite number")
        if self.ratios is not None:
            r = np.asarray(self.ratios, dtype=float)
            if (r <= 0).any() or not np.isfinite(r).all():
                raise ConfigError("penalty ratios must be positive finite numbers")
            if r[0] != 1.0:
                raise ConfigError("ratios[0] must equal 1 (ratios are lambda_s/lambda_1)")
            object.__setattr__(self, "ratios", tuple(float(v) for v in r))
        if self.alphas is not None:
            a = np.asarray(self.alphas, dtype=float)
            if ((a <= 0) | (a > 1)).any():
                raise ConfigError("alphas must lie in (0, 1]")
            object.__setattr__(self, "alphas", tuple(float(v) for v in a))
        if not 0.0 <= self.rho_star <= 1.0:
            raise ConfigError("rho_star must lie in [0, 1]")

    def ratio_vector(self, n_blocks: int) -> np.ndarray:
        if self.ratios is None:
            return np.ones(n_blocks)
        if len(self.ratios) != n_blocks:
            raise ConfigError(
                f"{len(self.ratios)} ratios supplied for {n_blocks} blocks"
            )
        return np.asarray(self.ratios)

    def alpha_vector(self, n_blocks: int) -> np.ndarray:
        if self.alphas is None:
            return np.ones(n_blocks)
        if len(self.alphas) == 1:
            return np.full(n_blocks, self.alphas[0])
        if len(self.alphas) != n_blocks:
            raise ConfigError(
                f"{len(self.alphas)} alphas supplied for {n_blocks} blocks"
            )
        return np.asarray(self.alphas)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "lambda1": self.lambda1,
            "ratios": list(self.ratios) if self.ratios is not None else None,
            "alphas": list(self.alphas) if self.alphas is not None else None,
            "rho_star": self.rho_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PenaltyConfig":
        return cls(
            method=d["method"],
            lambda1=d["lambda1"],
            ratios=tuple(d["ratios"]) if d.get("ratios") else None,
            alphas=tuple(d["alphas"]) if d.get("alphas") else None,
            rho_star=d.get("rho_star", 0.95),
        )


@dataclass
class FitResult:
    """A fitted model: intercepts, optional unpenalized block, sparse B.

    The penalized coefficient matrix is stored as (row, col, value) triplets
    with no explicit zeros. ``objective_trace`` is non-increasing for
    coordinate-descent fits and non-increasing up to the smoothing slack for
    SPG fits.
    """

    beta0: np.ndarray
    shape: tuple[int, int]
    B_rows: np.ndarray
    B_cols: np.ndarray
    B_vals: np.ndarray
    B0: np.ndarray | None = None
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    n_iter: int = 0
    converged: bool = True
    penalty: PenaltyConfig | None = None

    @classmethod
    def from_dense(cls, B, beta0, B0=None, objective_trace=None, n_iter=0,
                   converged=True, penalty=None) -> "FitResult":
        B = np.asarray(B, dtype=float)
        rows, cols = np.nonzero(B)
        return cls(
            beta0=np.asarray(beta0, dtype=float).copy(),
            shape=B.shape,
            B_rows=rows.astype(np.int64),
            B_cols=cols.astype(np.int64),
            B_vals=B[rows, cols].copy(),
            B0=None if B0 is None else np.asarray(B0, dtype=float).copy(),
            objective_trace=(np.asarray(objective_trace, dtype=float)
                             if objective_trace is not None else np.empty(0)),
            n_iter=n_iter,
            converged=converged,
            penalty=penalty,
        )

    def coef_matrix(self) -> np.ndarray:
        B = np.zeros(self.shape)
        B[self.B_rows, self.B_cols] = self.B_vals
        return B

    @property
    def n_nonzero(self) -> int:
        return int(self.B_vals.size)

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0.tolist(),
            "shape": list(self.shape),
            "triplets": [
                [int(r), int(c), float(v)]
                for r, c, v in zip(self.B_rows, self.B_cols, self.B_vals)
            ],
            "B0": self.B0.tolist() if self.B0 is not None else None,
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "objective_trace": self.objective_trace.tolist(),
            "penalty": self.penalty.to_dict() if self.penalty is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        trip = np.asarray(d.get("triplets") or np.empty((0, 3)), dtype=float)
        trip = trip.reshape(-1, 3)
        return cls(
            beta0=np.asarray(d["beta0"], dtype=float),
            shape=tuple(d["shape"]),
            B_rows=trip[:, 0].astype(np.int64),
            B_cols=trip[:, 1].astype(np.int64),
            B_vals=trip[:, 2],
            B0=np.asarray(d["B0"], dtype=float) if d.get("B0") is not None else None,
            objective_trace=np.asarray(d.get("objective_trace", []), dtype=float),
            n_iter=d.get("n_iter", 0),
            converged=d.get("converged", True),
            penalty=PenaltyConfig.from_dict(d["penalty"]) if d.get("penalty") else None,
        )


def destandardize_fit(fit: FitResult, stdz: Standardization) -> FitResult:
    """Map a fit on standardized data back to original-scale coefficients.

    Predictions are invariant: X_orig @ B_orig + beta0_orig reproduces the
    standardized-coordinates predictions.
    """
    B = fit.coef_matrix()
    B = (B / stdz.feature_sds[:, None]) * stdz.response_sds[None, :]
    beta0 = (stdz.response_means + fit.beta0 * stdz.response_sds
             - stdz.feature_means @ B)
    B0 = fit.B0
    if B0 is not None:
        B0 = B0 * stdz.response_sds[None, :]
        if stdz.u_means is not None:
            beta0 = beta0 - stdz.u_means @ B0
    return FitResult.from_dense(
        B, beta0, B0=B0, objective_trace=fit.objective_trace,
        n_iter=fit.n_iter, converged=fit.converged, penalty=fit.penalty,
    )


def predict(fit: FitResult, X: np.ndarray, U: np.ndarray | None = None) -> np.ndarray:
    """Fitted values 1 beta0' + U B0 + X B on the scale the fit was expressed in."""
    X = np.asarray(X, dtype=float)
    Yhat = fit.beta0[None, :] + X @ fit.coef_matrix()
    if fit.B0 is not None:
        if U is None:
            raise ConfigError("fit has unpenalized coefficients but no U was given")
        Yhat = Yhat + np.asarray(U, dtype=float) @ fit.B0
    return Yhat


def read_matrix_csv(path) -> pd.DataFrame:
    """Read a matrix CSV: first row column ids, first column row ids.

    Missing or non-numeric values are a hard error naming the position.
    """
    try:
        df = pd.read_csv(path, index_col=0)
    except FileNotFoundError:
        raise ConfigError(f"matrix file not found: {path}")
    except Exception as exc:  # malformed CSV
        raise ConfigError(f"could not parse matrix CSV {path}: {exc}")
    try:
        df = df.astype(float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"non-numeric value in {path}: {exc}")
    if df.isna().any().any():
        mask = df.isna()
        r = mask.any(axis=1).idxmax()
        c = mask.loc[r].idxmax()
        raise ConfigError(
            f"missing value in {path} at row {r!r}, column {c!r}; "
            "missing data are not supported"
        )
    return df


def write_matrix_csv(path, values, row_ids, col_ids) -> None:
    pd.DataFrame(np.asarray(values), index=list(row_ids),
                 columns=list(col_ids)).to_csv(path)
