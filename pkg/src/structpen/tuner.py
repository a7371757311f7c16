"""Interval-search hyperparameter optimization with a Gaussian-process surrogate.

A squared-exponential ARD kernel models the CV-loss surface over the visited
points; expected improvement picks the next point from a quasi-random
candidate set with a local polish. Everything is driven by one seed, so the
whole visited sequence is reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.stats import norm, qmc

from .errors import ConfigError, NumericalError

FAILURE_LOSS = 1e10  # large finite sentinel recorded when an objective call fails


@dataclass(frozen=True)
class SearchDim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"  # or "log10"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError(f"dimension {self.name!r}: lower must be < upper")
        if self.scale not in ("linear", "log10"):
            raise ConfigError("scale must be 'linear' or 'log10'")
        if self.scale == "log10" and self.lower <= 0:
            raise ConfigError("log10 dimensions need positive bounds")


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[SearchDim, ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ConfigError("search space needs at least one dimension")

    @property
    def d(self) -> int:
        return len(self.dims)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.empty_like(x)
        for i, dim in enumerate(self.dims):
            if dim.scale == "log10":
                lo, hi = np.log10(dim.lower), np.log10(dim.upper)
                u[i] = (np.log10(x[i]) - lo) / (hi - lo)
            else:
                u[i] = (x[i] - dim.lower) / (dim.upper - dim.lower)
        return u

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = np.empty_like(u)
        for i, dim in enumerate(self.dims):
            if dim.scale == "log10":
                lo, hi = np.log10(dim.lower), np.log10(dim.upper)
                x[i] = 10.0 ** (lo + u[i] * (hi - lo))
            else:
                x[i] = dim.lower + u[i] * (dim.upper - dim.lower)
        return x


@dataclass(frozen=True)
class KernelHyper:
    signal_var: float
    length_scales: np.ndarray  # one per dimension, in unit coordinates
    noise_var: float


@dataclass
class TunerState:
    """Visited points (original units), losses, surrogate hyperparameters."""

    space: SearchSpace
    points: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    kernel: KernelHyper | None = None

    @property
    def n_evals(self) -> int:
        return len(self.losses)

    @property
    def incumbent_index(self) -> int:
        if not self.losses:
            raise ConfigError("no evaluations recorded")
        return int(np.argmin(self.losses))

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        i = self.incumbent_index
        return self.points[i], self.losses[i]

    def unit_points(self) -> np.ndarray:
        return np.array([self.space.to_unit(x) for x in self.points])


def _kernel_matrix(U, V, hyper: KernelHyper) -> np.ndarray:
    d2 = ((U[:, None, :] - V[None, :, :]) / hyper.length_scales) ** 2
    return hyper.signal_var * np.exp(-0.5 * d2.sum(axis=-1))


def _chol_with_jitter(K):
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(K + jitter * np.eye(K.shape[0])), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("GP covariance matrix is singular even with jitter 1e-6")


def gp_posterior(state: TunerState, query) -> tuple[float, float]:
    """Posterior mean and variance at one query point (prior mean = mean loss)."""
    means, variances = gp_posterior_many(state, np.atleast_2d(np.asarray(query, dtype=float)))
    return float(means[0]), float(variances[0])


def gp_posterior_many(state: TunerState, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if state.kernel is None:
        raise ConfigError("kernel hyperparameters are not fitted")
    if state.n_evals < 2:
        raise ConfigError("need at least 2 visited points for a GP posterior")
    hyper = state.kernel
    U = state.unit_points()
    Q = np.array([state.space.to_unit(q) for q in np.atleast_2d(queries)])
    y = np.asarray(state.losses, dtype=float)
    prior = y.mean()
    K = _kernel_matrix(U, U, hyper) + hyper.noise_var * np.eye(U.shape[0])
    L, _ = _chol_with_jitter(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y - prior))
    Ks = _kernel_matrix(Q, U, hyper)
    mean = prior + Ks @ alpha
    v = np.linalg.solve(L, Ks.T)
    var = np.maximum(hyper.signal_var - (v * v).sum(axis=0), 0.0)
    return mean, var


def expected_improvement(mean: float, variance: float, best: float) -> float:
    """EI of a Gaussian belief (mean, variance) against the incumbent ``best``."""
    if variance < 0:
        raise ConfigError("variance must be nonnegative")
    sigma = np.sqrt(variance)
    if sigma == 0.0:
        return max(best - mean, 0.0)
    z = (best - mean) / sigma
    return float((best - mean) * norm.cdf(z) + sigma * norm.pdf(z))


def _ei_many(means, variances, best):
    sigma = np.sqrt(variances)
    out = np.maximum(best - means, 0.0)
    pos = sigma > 0
    z = (best - means[pos]) / sigma[pos]
    out[pos] = (best - means[pos]) * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    return out


def _neg_log_marginal(theta, U, y):
    signal, ls, noise = np.exp(theta[0]), np.exp(theta[1:-1]), np.exp(theta[-1])
    hyper = KernelHyper(signal, ls, noise)
    K = _kernel_matrix(U, U, hyper) + noise * np.eye(U.shape[0])
    try:
        L = np.linalg.cholesky(K + 1e-12 * np.eye(K.shape[0]))
    except np.linalg.LinAlgError:
        return 1e25
    yc = y - y.mean()
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, yc))
    return float(0.5 * yc @ alpha + np.log(np.diag(L)).sum()
                 + 0.5 * len(y) * np.log(2 * np.pi))


def fit_kernel(state: TunerState) -> KernelHyper:
    """Marginal-likelihood maximization over (signal, per-dim lengths, noise)."""
    U = state.unit_points()
    y = np.asarray(state.losses, dtype=float)
    var = y.var()
    d = state.space.d
    if var == 0.0:
        hyper = KernelHyper(0.0, np.ones(d), 0.0)
        state.kernel = hyper
        return hyper
    starts = [
        np.log(np.concatenate([[var], np.full(d, 0.3), [1e-4 * var + 1e-12]])),
        np.log(np.concatenate([[var], np.full(d, 1.0), [1e-2 * var + 1e-12]])),
    ]
    bounds = ([(np.log(1e-9 * var), np.log(1e3 * var))]
              + [(np.log(0.02), np.log(20.0))] * d
              + [(np.log(1e-12 * var), np.log(1e1 * var))])
    best_val, best_theta = np.inf, starts[0]
    for theta0 in starts:
        res = optimize.minimize(_neg_log_marginal, theta0, args=(U, y),
                                method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    hyper = KernelHyper(float(np.exp(best_theta[0])),
                        np.exp(best_theta[1:-1]),
                        float(np.exp(best_theta[-1])))
    state.kernel = hyper
    return hyper


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified design on [0,1]^d: one sample per stratum, per dimension."""
    out = np.empty((n, d))
    for j in range(d):
        out[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return out


def default_n_init(d: int) -> int:
    return max(2 * d + 2, 10)


def epsgo_minimize(objective, space: SearchSpace, n_init: int | None = None,
                   max_evals: int = 40, ei_tol: float = 1e-2, seed: int = 0,
                   n_candidates: int = 4096, anchors=None) -> TunerState:
    """Minimize a black-box loss over the search space.

    Seeds with a Latin-hypercube design (plus optional ``anchors``: points in
    original units that are always evaluated, e.g. the neutral configuration),
    then alternates kernel refits with expected-improvement acquisitions over
    a scrambled-Sobol candidate set (plus a local L-BFGS-B polish). Stops when
    the acquisition's EI falls below ei_tol * |incumbent loss| or the
    evaluation budget is exhausted. Objective failures are recorded as a large
    finite loss and the search continues. Deterministic under a fixed seed.
    """
    d = space.d
    if n_init is None:
        n_init = default_n_init(d)
    anchors = [np.atleast_1d(np.asarray(a, dtype=float)) for a in (anchors or [])]
    if not max_evals >= n_init + len(anchors) or not n_init >= d + 1:
        raise ConfigError("need max_evals >= n_init + len(anchors) and n_init >= d + 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    state = TunerState(space=space)

    def run(u):
        x = space.from_unit(np.clip(u, 0.0, 1.0))
        try:
            loss = float(objective(x))
            if not np.isfinite(loss):
                loss = FAILURE_LOSS
        except Exception:
            loss = FAILURE_LOSS
        state.points.append(x)
        state.losses.append(loss)

    for a in anchors:
        run(space.to_unit(a))
    for u in latin_hypercube(n_init, d, rng):
        run(u)

    m_bits = max(int(np.ceil(np.log2(n_candidates))), 1)
    while state.n_evals < max_evals:
        fit_kernel(state)
        best = min(state.losses)
        # fresh engine per round: Sobol balance requires power-of-2 draws
        sobol = qmc.Sobol(d, scramble=True, seed=int(rng.integers(2 ** 31)))
        cand = sobol.random_base2(m_bits)
        means, variances = gp_posterior_many(state, np.array([space.from_unit(u) for u in cand]))
        ei = _ei_many(means, variances, best)
        u0 = cand[int(np.argmax(ei))]

        def neg_ei(u):
            mu, var = gp_posterior(state, space.from_unit(np.clip(u, 0.0, 1.0)))
            return -expected_improvement(mu, var, best)

        res = optimize.minimize(neg_ei, u0, method="L-BFGS-B",
                                bounds=[(0.0, 1.0)] * d,
                                options={"maxiter": 50})
        u_next, ei_next = (res.x, -res.fun) if -res.fun >= ei.max() else (u0, ei.max())
        # skip duplicates of visited points (EI is degenerate there)
        U = state.unit_points()
        if np.min(((U - u_next) ** 2).sum(axis=1)) < 1e-16:
            order = np.argsort(-ei)
            for idx in order:
                if np.min(((U - cand[idx]) ** 2).sum(axis=1)) >= 1e-16:
                    u_next, ei_next = cand[idx], ei[idx]
                    break
            else:
                break
        run(u_next)
        if ei_next <= ei_tol * max(abs(min(state.losses)), 1e-12):
            break
    return state


def trace_frame(state: TunerState) -> pd.DataFrame:
    """One row per evaluation: index, point coordinates, loss, incumbent loss.

    log10-scaled dimensions are reported as ``log10_<name>`` columns.
    """
    rows = []
    best = np.inf
    for i, (x, loss) in enumerate(zip(state.points, state.losses)):
        best = min(best, loss)
        row = {"eval": i + 1}
        for j, dim in enumerate(state.space.dims):
            if dim.scale == "log10":
                row[f"log10_{dim.name}"] = np.log10(x[j])
            else:
                row[dim.name] = x[j]
        row["loss"] = loss
        row["incumbent_loss"] = best
        rows.append(row)
    return pd.DataFrame(rows)


def write_trace_csv(state: TunerState, path) -> None:
    trace_frame(state).to_csv(path, index=False)
