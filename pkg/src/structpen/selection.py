"""K-fold cross-validation, the lambda-path x ratio-space tuning protocol,
and the final refit on all training data."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import cd, spg
from .data import Dataset, FitResult, PenaltyConfig, destandardize_fit, predict, standardize
from .errors import ConfigError, NumericalError
from .fitting import fit_penalized, fit_with_unpenalized
from .spg import SpgOptions
from .tree import TreeStructure, build_tree
from .tuner import (SearchDim, SearchSpace, TunerState, default_n_init,
                    epsgo_minimize)

# named sub-streams of the run seed, so components are independently reproducible
STREAM_FOLDS = 1
STREAM_TUNER = 2
STREAM_SIM = 3


def stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence((int(seed), int(stream))).generate_state(1)[0])


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray  # fold label per sample
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.assignments)
        counts = np.bincount(a, minlength=self.k)
        if (counts == 0).any():
            raise ConfigError("every fold must be nonempty")

    def split(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.flatnonzero(self.assignments == f)
        train = np.flatnonzero(self.assignments != f)
        return train, test


def make_folds(n: int, k: int, strata=None, seed: int = 0) -> FoldPlan:
    """Deterministic stratified partition into k folds.

    Within each stratum, samples are shuffled and dealt round-robin with a
    rotating offset, so stratum proportions hold to within one sample. A
    stratum smaller than k triggers a warning (it cannot reach every fold).
    """
    if not 2 <= k <= n:
        raise ConfigError("need 2 <= k <= n")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), STREAM_FOLDS)))
    assignments = np.full(n, -1, dtype=np.int64)
    if strata is None:
        groups = [np.arange(n)]
    else:
        strata = np.asarray(strata)
        if strata.shape[0] != n:
            raise ConfigError("strata must have one label per sample")
        groups = [np.flatnonzero(strata == v) for v in np.unique(strata)]
    offset = 0
    for idx in groups:
        if idx.size < k:
            warnings.warn(
                f"stratum of size {idx.size} is smaller than k={k}; "
                "assigning its samples round-robin",
                stacklevel=2,
            )
        perm = rng.permutation(idx)
        for i, sample in enumerate(perm):
            assignments[sample] = (offset + i) % k
        offset += idx.size
    return FoldPlan(k=k, assignments=assignments, seed=seed)


@dataclass(frozen=True)
class CvResult:
    lambdas: np.ndarray
    mean_mse: np.ndarray
    se_mse: np.ndarray
    n_nonzero: np.ndarray
    n_folds_used: int

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.mean_mse))

    @property
    def best_lambda(self) -> float:
        return float(self.lambdas[self.best_index])

    @property
    def best_mse(self) -> float:
        return float(self.mean_mse[self.best_index])


def lambda_max_for(ds_std: Dataset, cfg: PenaltyConfig,
                   tree: TreeStructure | None = None) -> float:
    """Method-aware smallest all-zero lambda1 on a standardized dataset."""
    corr = np.abs(ds_std.X.T @ (ds_std.Y - ds_std.Y.mean(axis=0)))
    corr /= ds_std.m * ds_std.n
    S = ds_std.n_blocks
    ratios = cfg.ratio_vector(S)
    method = cfg.method
    if method in ("lasso", "elastic_net"):
        alpha = cfg.alpha_vector(1)[0] if method == "elastic_net" else 1.0
        if alpha == 0:
            raise ConfigError("lambda_max is undefined for alpha = 0")
        return float(corr.max() / alpha)
    if method in ("ipf_lasso", "sipf_elastic_net", "ipf_elastic_net"):
        alphas = (cfg.alpha_vector(S)
                  if method != "ipf_lasso" else np.ones(S))
        scales = np.repeat(1.0 / (alphas * ratios), ds_std.block_sizes)
        return float((corr * scales[:, None]).max())
    if method in ("tree_lasso", "ipf_tree_lasso"):
        if tree is None:
            raise ConfigError(f"{method} requires a tree")
        fg = spg.FlatGroups.from_tree(tree)
        scales = np.repeat(1.0 / ratios, ds_std.block_sizes)
        return float((corr * scales[:, None] / fg.leaf_weights[None, :]).max())
    raise ConfigError(f"unknown method {method!r}")


def default_min_ratio(n: int, p: int) -> float:
    return 1e-4 if n > p else 0.01


def _fit_path_method(ds_std: Dataset, cfg: PenaltyConfig, path: cd.PathSpec,
                     tree, cd_opts, spg_opts) -> list[FitResult]:
    """Warm-started fits along the path for any method (standardized scale)."""
    fits = []
    warm = None
    for lam in path.lambdas:
        cfg_l = replace(cfg, lambda1=float(lam))
        if ds_std.U is not None:
            fit = fit_with_unpenalized(ds_std, cfg_l, tree=tree,
                                       cd_opts=cd_opts, spg_opts=spg_opts, warm=warm)
        else:
            fit = fit_penalized(ds_std, cfg_l, tree=tree,
                                cd_opts=cd_opts, spg_opts=spg_opts, warm=warm)
        fits.append(fit)
        warm = fit.coef_matrix()
    return fits


def cv_loss(ds: Dataset, cfg: PenaltyConfig, folds: FoldPlan,
            path: cd.PathSpec, tree: TreeStructure | None = None, *,
            leak_free: bool = True, tree_per_fold: bool = False,
            center_y: bool = True, scale_x: bool = True, scale_block=None,
            cd_opts=None, spg_opts=None) -> CvResult:
    """Mean held-out MSE along the lambda path.

    Per fold: standardize the training part (leak-free default), fit the
    warm-started path, predict the held-out rows on the original scale, and
    accumulate (1/(m n_fold)) ||Y_fold - Yhat_fold||_F^2. A failing fold is
    skipped with a warning as long as at least k-1 folds succeed.
    """
    T = path.n_lambda
    mses = []
    nnzs = []
    global_std = None
    if not leak_free:
        global_std = standardize(ds, center_y=center_y, scale_x=scale_x,
                                 scale_block=scale_block)
    for f in range(folds.k):
        tr, te = folds.split(f)
        try:
            if leak_free:
                ds_tr = ds.subset_rows(tr)
                ds_tr_std, stdz = standardize(ds_tr, center_y=center_y,
                                              scale_x=scale_x, scale_block=scale_block)
            else:
                ds_tr_std = global_std[0].subset_rows(tr)
                stdz = global_std[1]
            fold_tree = tree
            if tree_per_fold and cfg.method in ("tree_lasso", "ipf_tree_lasso"):
                fold_tree = build_tree(ds.Y[tr], rho_star=cfg.rho_star)
            fits = _fit_path_method(ds_tr_std, cfg, path, fold_tree,
                                    cd_opts, spg_opts)
        except (ConfigError, NumericalError) as exc:
            warnings.warn(f"fold {f + 1} failed and was skipped: {exc}", stacklevel=2)
            continue
        Y_te, X_te = ds.Y[te], ds.X[te]
        U_te = ds.U[te] if ds.U is not None else None
        fold_mse = np.empty(T)
        fold_nnz = np.empty(T)
        for t, fit in enumerate(fits):
            fit_orig = destandardize_fit(fit, stdz)
            Yhat = predict(fit_orig, X_te, U=U_te)
            fold_mse[t] = float(((Y_te - Yhat) ** 2).sum()) / (ds.m * te.size)
            fold_nnz[t] = fit_orig.n_nonzero
        mses.append(fold_mse)
        nnzs.append(fold_nnz)
    used = len(mses)
    if used < folds.k - 1:
        raise NumericalError(
            f"cross-validation failed: only {used} of {folds.k} folds succeeded"
        )
    M = np.vstack(mses)
    N = np.vstack(nnzs)
    se = M.std(axis=0, ddof=1) / np.sqrt(used) if used > 1 else np.zeros(T)
    return CvResult(lambdas=path.lambdas.copy(), mean_mse=M.mean(axis=0),
                    se_mse=se, n_nonzero=N.mean(axis=0), n_folds_used=used)


@dataclass(frozen=True)
class TuneOptions:
    folds: int = 5
    seed: int = 0
    strata: tuple | None = None
    n_lambda: int = 50
    n_lambda_tree: int | None = None   # tree-family override (SPG paths cost more)
    min_ratio: float | None = None     # None: 0.01, or 1e-4 when n > p
    rho_star: float = 0.95
    alpha_lower: float = 0.05
    ratio_bounds: tuple[float, float] = (1e-3, 1e3)
    n_init: int | None = None
    max_evals: int = 30
    ei_tol: float = 1e-2
    leak_free: bool = True
    tree_per_fold: bool = False
    center_y: bool = True
    scale_x: bool = True
    scale_block: tuple | None = None
    cd_opts: cd.CdOptions | None = None
    spg_opts: SpgOptions | None = None


def _search_space(method: str, S: int, opts: TuneOptions) -> SearchSpace | None:
    dims = []
    if method in ("elastic_net", "sipf_elastic_net"):
        dims.append(SearchDim("alpha", opts.alpha_lower, 1.0))
    if method == "ipf_elastic_net":
        dims.extend(SearchDim(f"alpha{s + 1}", opts.alpha_lower, 1.0)
                    for s in range(S))
    if method in ("ipf_lasso", "sipf_elastic_net", "ipf_elastic_net",
                  "ipf_tree_lasso"):
        dims.extend(SearchDim(f"ratio{s + 2}", *opts.ratio_bounds, scale="log10")
                    for s in range(S - 1))
    return SearchSpace(tuple(dims)) if dims else None


def _point_to_params(method: str, x: np.ndarray, S: int):
    """Split a tuner point into (ratios, alphas) for PenaltyConfig."""
    x = np.atleast_1d(x)
    ratios = None
    alphas = None
    i = 0
    if method in ("elastic_net", "sipf_elastic_net"):
        alphas = (float(x[0]),)
        i = 1
    elif method == "ipf_elastic_net":
        alphas = tuple(float(v) for v in x[:S])
        i = S
    if method in ("ipf_lasso", "sipf_elastic_net", "ipf_elastic_net",
                  "ipf_tree_lasso"):
        ratios = (1.0,) + tuple(float(v) for v in x[i:i + S - 1])
    return ratios, alphas


def tune_and_fit(ds: Dataset, method: str,
                 opts: TuneOptions | None = None,
                 ) -> tuple[FitResult, TunerState | None, CvResult]:
    """Full tuning protocol: lambda1 by path search inside the CV objective,
    penalty ratios / alphas by the GP tuner where the method has them, then a
    final warm-started refit on all training data at the selected parameters.

    The returned FitResult is on the original data scale.
    """
    opts = opts or TuneOptions()
    if method not in ("lasso", "elastic_net", "ipf_lasso", "sipf_elastic_net",
                      "ipf_elastic_net", "tree_lasso", "ipf_tree_lasso"):
        raise ConfigError(f"unknown method {method!r}")
    S = ds.n_blocks
    folds = make_folds(ds.n, opts.folds, strata=opts.strata,
                       seed=stream_seed(opts.seed, STREAM_FOLDS))
    tree = None
    if method in ("tree_lasso", "ipf_tree_lasso"):
        # default: tree built once from the full training responses
        tree = build_tree(ds.Y, rho_star=opts.rho_star)
    min_ratio = opts.min_ratio or default_min_ratio(ds.n, ds.p)
    ds_std_full, stdz_full = standardize(ds, center_y=opts.center_y,
                                         scale_x=opts.scale_x,
                                         scale_block=opts.scale_block)

    n_lambda = opts.n_lambda
    if method in ("tree_lasso", "ipf_tree_lasso") and opts.n_lambda_tree:
        n_lambda = opts.n_lambda_tree

    def cv_at(ratios, alphas) -> tuple[PenaltyConfig, cd.PathSpec, CvResult]:
        cfg_probe = PenaltyConfig(method=method, lambda1=1.0, ratios=ratios,
                                  alphas=alphas, rho_star=opts.rho_star)
        lam_max = lambda_max_for(ds_std_full, cfg_probe, tree)
        path = cd.make_path(lam_max, n_lambda, min_ratio)
        cv = cv_loss(ds, cfg_probe, folds, path, tree,
                     leak_free=opts.leak_free, tree_per_fold=opts.tree_per_fold,
                     center_y=opts.center_y, scale_x=opts.scale_x,
                     scale_block=opts.scale_block,
                     cd_opts=opts.cd_opts, spg_opts=opts.spg_opts)
        return cfg_probe, path, cv

    space = _search_space(method, S, opts)
    state = None
    evals: list[tuple | None] = []
    if space is not None:
        def objective(x):
            try:
                ratios, alphas = _point_to_params(method, x, S)
                cfg_p, path, cv = cv_at(ratios, alphas)
                evals.append((cfg_p, path, cv))
                return cv.best_mse
            except Exception:
                evals.append(None)
                raise

        n_init = opts.n_init or default_n_init(space.d)
        # the neutral anchor (every ratio/alpha at 1) is always evaluated, so
        # the incumbent can never lose to the plain un-factored method in CV
        anchor = np.ones(space.d)
        state = epsgo_minimize(objective, space, n_init=n_init,
                               max_evals=max(opts.max_evals, n_init + 1),
                               ei_tol=opts.ei_tol,
                               seed=stream_seed(opts.seed, STREAM_TUNER),
                               anchors=[anchor])
        chosen = evals[state.incumbent_index]
        if chosen is None:
            raise NumericalError("every tuner evaluation failed")
        cfg_sel, path_sel, cv_sel = chosen
    else:
        cfg_sel, path_sel, cv_sel = cv_at(None, None)

    # refit on all training data, warm-started down the path to the selected lambda
    best = cv_sel.best_index
    refit_path = cd.PathSpec(path_sel.lambdas[:best + 1])
    cfg_final = replace(cfg_sel, lambda1=cv_sel.best_lambda)
    fits = _fit_path_method(ds_std_full, cfg_final, refit_path, tree,
                            opts.cd_opts, opts.spg_opts)
    final = destandardize_fit(fits[-1], stdz_full)
    final.penalty = cfg_final
    return final, state, cv_sel
