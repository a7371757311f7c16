"""Method dispatch: route a PenaltyConfig to the right solver.

Lasso-family methods go through coordinate descent (IPF variants via the
augmented problem), tree-family methods through the SPG solver. The
high-level entry point standardizes, fits, and reports coefficients on the
original scale; datasets with an unpenalized block use the alternating
scheme in ``fit_with_unpenalized``.
"""
from __future__ import annotations

import warnings

import numpy as np

from . import cd, ipf, spg
from .data import (Dataset, FitResult, PenaltyConfig, Standardization,
                   destandardize_fit, standardize)
from .errors import ConfigError
from .spg import FlatGroups, SpgOptions
from .tree import TreeStructure, build_tree


def penalty_value(B: np.ndarray, cfg: PenaltyConfig, block_sizes,
                  tree: TreeStructure | None = None) -> float:
    """Direct penalty evaluation for any of the seven methods."""
    B = np.asarray(B, dtype=float)
    S = len(block_sizes)
    off = np.concatenate([[0], np.cumsum(block_sizes)])
    ratios = cfg.ratio_vector(S)
    lam_s = cfg.lambda1 * ratios
    if cfg.method == "lasso":
        return cfg.lambda1 * float(np.abs(B).sum())
    if cfg.method == "elastic_net":
        a = cfg.alpha_vector(S)[0]
        return cfg.lambda1 * float(a * np.abs(B).sum() + 0.5 * (1 - a) * (B * B).sum())
    if cfg.method == "ipf_lasso":
        return float(sum(lam_s[s] * np.abs(B[off[s]:off[s + 1]]).sum()
                         for s in range(S)))
    if cfg.method in ("sipf_elastic_net", "ipf_elastic_net"):
        alphas = cfg.alpha_vector(S)
        total = 0.0
        for s in range(S):
            Bs = B[off[s]:off[s + 1]]
            total += lam_s[s] * (alphas[s] * np.abs(Bs).sum()
                                 + 0.5 * (1 - alphas[s]) * (Bs * Bs).sum())
        return float(total)
    if cfg.method in ("tree_lasso", "ipf_tree_lasso"):
        if tree is None:
            raise ConfigError(f"{cfg.method} requires a tree")
        fg = FlatGroups.from_tree(tree)
        if cfg.method == "tree_lasso":
            return fg.penalty(B, cfg.lambda1)
        return float(sum(fg.penalty(B[off[s]:off[s + 1]], lam_s[s])
                         for s in range(S)))
    raise ConfigError(f"unknown method {cfg.method!r}")


def objective_value(ds: Dataset, beta0, B, cfg: PenaltyConfig,
                    tree: TreeStructure | None = None, B0=None) -> float:
    """(1/(2mn)) ||Y - 1 beta0' - U B0 - X B||_F^2 + pen(B)."""
    R = ds.Y - np.asarray(beta0)[None, :] - ds.X @ np.asarray(B)
    if B0 is not None:
        if ds.U is None:
            raise ConfigError("B0 given but the dataset has no U block")
        R = R - ds.U @ np.asarray(B0)
    loss = float((R * R).sum()) / (2.0 * ds.m * ds.n)
    return loss + penalty_value(B, cfg, ds.block_sizes, tree)


def _augment(ds: Dataset, cfg: PenaltyConfig) -> ipf.AugmentedProblem:
    if cfg.method == "ipf_lasso":
        return ipf.ipf_lasso_augment(ds, cfg)
    if cfg.method in ("sipf_elastic_net", "ipf_elastic_net", "elastic_net"):
        return ipf.ipf_en_augment(ds, cfg)
    if cfg.method == "ipf_tree_lasso":
        # pure column scaling; the tree group structure passes through unchanged
        ratios = cfg.ratio_vector(ds.n_blocks)
        scales = np.repeat(1.0 / ratios, ds.block_sizes)
        return ipf.AugmentedProblem(
            Xstar=ds.X * scales[None, :],
            Ystar=np.asarray(ds.Y),
            lambda_star=cfg.lambda1,
            col_scales=scales,
            extra_rows=0,
            block_sizes=ds.block_sizes,
        )
    raise ConfigError(f"method {cfg.method!r} has no augmentation")


def fit_penalized(ds: Dataset, cfg: PenaltyConfig,
                  tree: TreeStructure | None = None,
                  cd_opts: cd.CdOptions | None = None,
                  spg_opts: SpgOptions | None = None,
                  warm=None) -> FitResult:
    """Fit one method at fixed penalty parameters on a standardized dataset.

    Coefficients come back in the coordinates of ``ds``; the intercept is
    recovered from residual column means on the original rows.
    """
    method = cfg.method
    if method in ("tree_lasso", "ipf_tree_lasso") and tree is None:
        raise ConfigError(f"{method} requires a tree over the response columns")
    if method == "lasso":
        return cd.fit_lasso(ds, cfg.lambda1, opts=cd_opts, warm=warm)
    if method == "elastic_net":
        alpha = cfg.alpha_vector(1)[0]
        fit = cd.fit_elastic_net(ds, cfg.lambda1, alpha, opts=cd_opts, warm=warm)
        fit.penalty = cfg
        return fit
    if method == "tree_lasso":
        return spg.fit_tree_lasso(ds, tree, cfg.lambda1, opts=spg_opts,
                                  warm=warm, penalty=cfg)

    aug = _augment(ds, cfg)
    warm_star = None
    if warm is not None:
        warm_star = np.asarray(warm, dtype=float) / aug.col_scales[:, None]
    ds_star = aug.dataset()
    if method == "ipf_tree_lasso":
        inner = spg.fit_tree_lasso(ds_star, tree, aug.lambda_star,
                                   opts=spg_opts, warm=warm_star)
    else:
        inner = cd.fit_lasso(ds_star, aug.lambda_star, opts=cd_opts,
                             warm=warm_star)
    B = ipf.back_transform(inner.coef_matrix(), aug)
    # appended rows must not contaminate the intercept: recover it on the
    # original rows only
    beta0 = (ds.Y - ds.X @ B).mean(axis=0)
    return FitResult.from_dense(
        B, beta0, objective_trace=inner.objective_trace, n_iter=inner.n_iter,
        converged=inner.converged, penalty=cfg,
    )


def fit_with_unpenalized(ds: Dataset, cfg: PenaltyConfig,
                         tree: TreeStructure | None = None,
                         cd_opts: cd.CdOptions | None = None,
                         spg_opts: SpgOptions | None = None,
                         warm=None, outer_tol: float = 1e-6,
                         max_outer: int = 50) -> FitResult:
    """Alternate exact least squares for (beta0, B0) with penalized solves for B.

    Step (a) refits (beta0, B0) on Y - X B by minimum-norm least squares;
    step (b) runs one full penalized solve for B on Y - 1 beta0' - U B0.
    Stops when the joint objective changes by less than outer_tol (relative).
    """
    if ds.U is None:
        raise ConfigError("fit_with_unpenalized requires a dataset with U")
    n, p0 = ds.U.shape
    A = np.column_stack([np.ones(n), ds.U])
    rank = np.linalg.matrix_rank(A)
    if rank < p0 + 1:
        warnings.warn(
            "U is rank-deficient together with the intercept; using the "
            "minimum-norm least-squares solution",
            stacklevel=2,
        )

    B = np.zeros((ds.p, ds.m)) if warm is None else np.array(warm, dtype=float)
    trace = []
    prev = np.inf
    converged = False
    inner_fit = None
    it = 0
    for it in range(1, max_outer + 1):
        coef, *_ = np.linalg.lstsq(A, ds.Y - ds.X @ B, rcond=None)
        beta0, B0 = coef[0], coef[1:]
        resid = ds.Y - beta0[None, :] - ds.U @ B0
        inner_fit = fit_penalized(ds.with_responses(resid), cfg, tree=tree,
                                  cd_opts=cd_opts, spg_opts=spg_opts, warm=B)
        B = inner_fit.coef_matrix()
        # the inner fit's own intercept is absorbed into the next LS step
        obj = objective_value(ds, beta0, B, cfg, tree=tree, B0=B0)
        trace.append(obj)
        if np.isfinite(prev) and abs(prev - obj) <= outer_tol * max(abs(prev), 1.0):
            converged = True
            break
        prev = obj

    coef, *_ = np.linalg.lstsq(A, ds.Y - ds.X @ B, rcond=None)
    beta0, B0 = coef[0], coef[1:]
    return FitResult.from_dense(
        B, beta0, B0=B0, objective_trace=np.asarray(trace), n_iter=it,
        converged=converged, penalty=cfg,
    )


def fit_on_dataset(ds: Dataset, cfg: PenaltyConfig,
                   tree: TreeStructure | None = None,
                   cd_opts: cd.CdOptions | None = None,
                   spg_opts: SpgOptions | None = None,
                   warm: FitResult | None = None,
                   center_y: bool = True, scale_x: bool = True,
                   scale_y: bool = False, scale_block=None,
                   ) -> tuple[FitResult, Standardization]:
    """Standardize, fit, and return an original-scale FitResult.

    ``warm`` is a previous original-scale fit; its coefficients are mapped
    into standardized coordinates before being reused.
    """
    ds_std, stdz = standardize(ds, center_y=center_y, scale_x=scale_x,
                               scale_y=scale_y, scale_block=scale_block)
    if tree is None and cfg.method in ("tree_lasso", "ipf_tree_lasso"):
        tree = build_tree(ds.Y, rho_star=cfg.rho_star)
    warm_std = None
    if warm is not None:
        warm_std = (warm.coef_matrix() * stdz.feature_sds[:, None]
                    / stdz.response_sds[None, :])
    if ds_std.U is not None:
        fit = fit_with_unpenalized(ds_std, cfg, tree=tree, cd_opts=cd_opts,
                                   spg_opts=spg_opts, warm=warm_std)
    else:
        fit = fit_penalized(ds_std, cfg, tree=tree, cd_opts=cd_opts,
                            spg_opts=spg_opts, warm=warm_std)
    return destandardize_fit(fit, stdz), stdz
