"""Synthetic data generation for the three benchmark scenarios plus the
evaluation metrics and the repeated-study driver.

Features are drawn from a blocked covariance: b latent groups per source with
within-group covariance sigma, unit variances, and pairing of group i of
source 1 with group i of source 2 across sources. The second source is
dichotomized at zero to emulate binary mutation calls. Responses follow
Y = X B + E with iid Gaussian noise; a validation set is simulated
independently in an identical manner.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .data import Dataset, FitResult, assemble_dataset, predict
from .errors import ConfigError, NumericalError
from .selection import STREAM_SIM, TuneOptions, stream_seed, tune_and_fit

BUNDLED_SCENARIOS = (
    "scenario1", "scenario1_wide",
    "scenario2", "scenario2_wide",
    "scenario3", "scenario3_wide",
)


@dataclass(frozen=True)
class CoefBlock:
    """One constant rectangle of the true coefficient matrix (1-based, inclusive)."""

    row_start: int
    row_end: int
    col_start: int
    col_end: int
    value: float


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    m: int
    p1: int
    p2: int
    sigma: float
    b: int
    blocks: tuple[CoefBlock, ...]
    noise_sd: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.n < 2 or self.m < 1 or self.p1 < 1 or self.p2 < 1:
            raise ConfigError("scenario dimensions out of range")
        if self.p1 % self.b or self.p2 % self.b:
            raise ConfigError("p1 and p2 must be divisible by the group count b")
        if not 0.0 <= self.sigma < 1.0:
            raise ConfigError("sigma must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        p = self.p1 + self.p2
        for blk in self.blocks:
            if not (1 <= blk.row_start <= blk.row_end <= p
                    and 1 <= blk.col_start <= blk.col_end <= self.m):
                raise ConfigError(f"coefficient block out of range: {blk}")
            if not np.isfinite(blk.value):
                raise ConfigError("coefficient block values must be finite")

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n, "m": self.m, "p1": self.p1, "p2": self.p2,
            "sigma": self.sigma, "b": self.b, "noise_sd": self.noise_sd,
            "seed": self.seed,
            "blocks": [vars(b) for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(
            n=int(d["n"]), m=int(d["m"]), p1=int(d["p1"]), p2=int(d["p2"]),
            sigma=float(d["sigma"]), b=int(d["b"]),
            blocks=tuple(CoefBlock(**{k: (float(v) if k == "value" else int(v))
                                      for k, v in blk.items()})
                         for blk in d["blocks"]),
            noise_sd=float(d.get("noise_sd", 1.0)),
            seed=int(d.get("seed", 0)),
            name=d.get("name", ""),
        )


def load_scenario(path_or_name) -> ScenarioSpec:
    """Load a scenario JSON from a path or a bundled name (scenario1..3[_wide])."""
    name = str(path_or_name)
    if name in BUNDLED_SCENARIOS:
        text = (resources.files("structpen") / "scenarios" / f"{name}.json").read_text()
        return ScenarioSpec.from_dict(json.loads(text))
    try:
        with open(path_or_name) as fh:
            return ScenarioSpec.from_dict(json.load(fh))
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path_or_name}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"could not parse scenario file {path_or_name}: {exc}")


def save_scenario(spec: ScenarioSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=1)


def build_sigma(p1: int, p2: int, b: int, sigma: float) -> np.ndarray:
    """Blocked covariance: unit diagonal, sigma within each latent group and
    between paired groups of the two sources, zero elsewhere. PSD is checked."""
    if p1 % b or p2 % b:
        raise ConfigError("p1 and p2 must be divisible by b")
    if not 0.0 <= sigma < 1.0:
        raise ConfigError("sigma must lie in [0, 1)")
    g1, g2 = p1 // b, p2 // b
    p = p1 + p2
    S = np.zeros((p, p))
    for i in range(b):
        r1 = slice(i * g1, (i + 1) * g1)
        r2 = slice(p1 + i * g2, p1 + (i + 1) * g2)
        S[r1, r1] = sigma
        S[r2, r2] = sigma
        S[r1, r2] = sigma
        S[r2, r1] = sigma
    np.fill_diagonal(S, 1.0)
    if np.linalg.eigvalsh(S).min() < -1e-8:
        raise NumericalError("covariance matrix is not positive semidefinite")
    return S


def true_coefficients(spec: ScenarioSpec) -> np.ndarray:
    B = np.zeros((spec.p, spec.m))
    for blk in spec.blocks:
        B[blk.row_start - 1:blk.row_end, blk.col_start - 1:blk.col_end] = blk.value
    return B


def _draw(rng: np.random.Generator, spec: ScenarioSpec, L: np.ndarray,
          B: np.ndarray) -> Dataset:
    # fixed generation order: feature normals first, then noise
    Z = rng.standard_normal((spec.n, spec.p))
    Xt = Z @ L.T
    X1 = Xt[:, :spec.p1]
    X2 = (Xt[:, spec.p1:] > 0).astype(float)
    E = rng.standard_normal((spec.n, spec.m)) * spec.noise_sd
    Y = np.hstack([X1, X2]) @ B + E
    return assemble_dataset(Y, [X1, X2])


def simulate_dataset(spec: ScenarioSpec, seed: int | None = None,
                     ) -> tuple[Dataset, Dataset, np.ndarray]:
    """Draw (train, validation, B_true); validation uses an independent stream."""
    seed = spec.seed if seed is None else seed
    Sigma = build_sigma(spec.p1, spec.p2, spec.b, spec.sigma)
    L = np.linalg.cholesky(Sigma)
    B = true_coefficients(spec)
    root = np.random.SeedSequence((int(seed), STREAM_SIM))
    ss_train, ss_val = root.spawn(2)
    train = _draw(np.random.default_rng(ss_train), spec, L, B)
    val = _draw(np.random.default_rng(ss_val), spec, L, B)
    return train, val, B


@dataclass(frozen=True)
class SimMetrics:
    mse_val: float
    r2_val: float
    sensitivity: float
    specificity: float
    vs: int
    avg_abs_error: float

    def to_dict(self) -> dict:
        return {
            "mse_val": self.mse_val, "r2_val": self.r2_val,
            "sensitivity": self.sensitivity, "specificity": self.specificity,
            "vs": self.vs, "avg_abs_error": self.avg_abs_error,
        }


def evaluate(fit: FitResult, B_true: np.ndarray, val: Dataset) -> SimMetrics:
    """Validation MSE/R^2 plus support-recovery metrics over the p x m grid."""
    B_true = np.asarray(B_true, dtype=float)
    Bhat = fit.coef_matrix()
    if Bhat.shape != B_true.shape:
        raise ConfigError(
            f"fit has shape {Bhat.shape} but B_true has {B_true.shape}"
        )
    Yhat = predict(fit, val.X, U=val.U)
    resid = val.Y - Yhat
    mse = float((resid ** 2).sum()) / (val.m * val.n)
    centered = val.Y - val.Y.mean(axis=0)
    sst = float((centered ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / sst if sst > 0 else np.nan
    true_nz = B_true != 0
    est_nz = Bhat != 0
    tp = int((true_nz & est_nz).sum())
    tn = int((~true_nz & ~est_nz).sum())
    n_nz = int(true_nz.sum())
    n_z = true_nz.size - n_nz
    sens = tp / n_nz if n_nz else 1.0
    spec = tn / n_z if n_z else 1.0
    avg_err = float(np.abs(Bhat - B_true).sum()) / B_true.size
    return SimMetrics(mse_val=mse, r2_val=r2, sensitivity=sens,
                      specificity=spec, vs=int(est_nz.sum()),
                      avg_abs_error=avg_err)


STUDY_COLUMNS = ("rep", "method", "mse_val", "r2_val", "sensitivity",
                 "specificity", "vs", "avg_abs_error", "wall_time_s")


def _run_rep(spec: ScenarioSpec, methods, rep: int, rep_seed: int,
             tune_opts: TuneOptions) -> list[dict]:
    train, val, B_true = simulate_dataset(spec, seed=rep_seed)
    rows = []
    for mi, method in enumerate(methods):
        method_seed = int(np.random.SeedSequence((rep_seed, mi)).generate_state(1)[0])
        opts = TuneOptions(**{**vars(tune_opts), "seed": method_seed})
        t0 = time.perf_counter()
        try:
            fit, _, _ = tune_and_fit(train, method, opts)
            metrics = evaluate(fit, B_true, val).to_dict()
        except Exception as exc:  # failure row; the study continues
            warnings.warn(f"rep {rep} method {method} failed: {exc}", stacklevel=2)
            metrics = {k: np.nan for k in
                       ("mse_val", "r2_val", "sensitivity", "specificity",
                        "vs", "avg_abs_error")}
        elapsed = time.perf_counter() - t0
        rows.append({"rep": rep, "method": method, **metrics,
                     "wall_time_s": elapsed})
    return rows


def run_study(spec: ScenarioSpec, methods, reps: int, seed: int = 0,
              tune_opts: TuneOptions | None = None,
              threads: int | None = None) -> pd.DataFrame:
    """Repeated simulate -> tune -> evaluate over independent replicates.

    Per-rep seeds derive deterministically from the study seed, so the table
    (wall_time_s aside) is reproducible regardless of scheduling. Reps run in
    parallel; rows come back sorted by (rep, method order).
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    methods = list(methods)
    tune_opts = tune_opts or TuneOptions()
    rep_seeds = [int(c.generate_state(1)[0])
                 for c in np.random.SeedSequence(int(seed)).spawn(reps)]
    n_jobs = threads if threads else -1  # default: available parallelism
    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_run_rep)(spec, methods, r + 1, rep_seeds[r], tune_opts)
        for r in range(reps)
    )
    rows = [row for chunk in chunks for row in chunk]
    df = pd.DataFrame(rows, columns=list(STUDY_COLUMNS))
    order = {m: i for i, m in enumerate(methods)}
    df = df.sort_values(["rep", "method"],
                        key=lambda s: s.map(order) if s.name == "method" else s)
    return df.reset_index(drop=True)


SUMMARY_METRICS = ("avg_abs_error", "sensitivity", "specificity", "vs")


def summarize_study(df: pd.DataFrame) -> pd.DataFrame:
    """Per-method mean and SD of the support/accuracy metric set."""
    rows = []
    for method in df["method"].unique():
        sub = df[df["method"] == method]
        for stat, fn in (("mean", np.nanmean),
                         ("sd", lambda v: np.nanstd(v, ddof=1))):
            row = {"method": method, "stat": stat}
            for metric in SUMMARY_METRICS:
                vals = sub[metric].to_numpy(dtype=float)
                row[metric] = float(fn(vals)) if np.isfinite(vals).any() else np.nan
            rows.append(row)
    return pd.DataFrame(rows, columns=["method", "stat", *SUMMARY_METRICS])
