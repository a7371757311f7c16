"""Augmented-problem constructions for integrative penalty factors (IPF).

Every IPF-type method reduces to its non-IPF original on a transformed
design: per-block column scaling maps block-specific l1/group penalties to a
single global one, and an extra block of diagonal rows absorbs the l2 part of
the elastic-net family. ``back_transform`` maps coefficients of the
transformed problem back to the original parameterization.

Conventions: the solvers normalize the squared loss by 1/(2 m rows), so the
elastic-net augmentation emits lambda_star = lambda1 * n / (n + p), which
makes a verbatim lasso solve on (Xstar, Ystar) minimize the original
objective exactly (up to a positive constant factor).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, PenaltyConfig, assemble_dataset
from .errors import ConfigError


@dataclass(frozen=True)
class AugmentedProblem:
    """Transformed design plus the bookkeeping needed to undo it.

    ``col_scales`` holds the per-feature multipliers mapping rows of the
    transformed coefficient matrix back to original rows (B = col_scales * Bstar,
    rowwise); ``extra_rows`` counts appended rows (0 for pure column scaling).
    """

    Xstar: np.ndarray
    Ystar: np.ndarray
    lambda_star: float
    col_scales: np.ndarray
    extra_rows: int
    block_sizes: tuple[int, ...]

    def __post_init__(self):
        if self.Xstar.shape[0] != self.Ystar.shape[0]:
            raise ConfigError("Xstar and Ystar row counts disagree")
        if self.col_scales.shape[0] != self.Xstar.shape[1]:
            raise ConfigError("col_scales length must equal the feature count")
        if (self.col_scales <= 0).any():
            raise ConfigError("col_scales must be strictly positive")

    def dataset(self) -> Dataset:
        """Wrap the augmented matrices as a Dataset for the solvers."""
        off = np.concatenate([[0], np.cumsum(self.block_sizes)])
        blocks = [self.Xstar[:, off[s]:off[s + 1]] for s in range(len(self.block_sizes))]
        return assemble_dataset(self.Ystar, blocks)


def _feature_scales(ds: Dataset, ratios: np.ndarray,
                    alphas: np.ndarray | None = None,
                    skip: np.ndarray | None = None) -> np.ndarray:
    """Per-feature multiplier lambda1/(alpha_s lambda_s); 1 for skipped features."""
    per_block = 1.0 / ratios if alphas is None else 1.0 / (alphas * ratios)
    scales = np.repeat(per_block, ds.block_sizes).astype(float)
    if skip is not None:
        scales[skip] = 1.0
    return scales


def ipf_lasso_augment(ds: Dataset, cfg: PenaltyConfig) -> AugmentedProblem:
    """Column scaling reducing sum_s lambda_s ||B_s||_1 to lambda1 ||Bstar||_1.

    Block s is multiplied by lambda1/lambda_s; all ratios equal to 1 leaves the
    design untouched (plain lasso).
    """
    ratios = cfg.ratio_vector(ds.n_blocks)
    scales = _feature_scales(ds, ratios)
    return AugmentedProblem(
        Xstar=ds.X * scales[None, :],
        Ystar=np.asarray(ds.Y),
        lambda_star=cfg.lambda1,
        col_scales=scales,
        extra_rows=0,
        block_sizes=ds.block_sizes,
    )


def ipf_en_augment(ds: Dataset, cfg: PenaltyConfig) -> AugmentedProblem:
    """Row-and-column augmentation reducing the (s)IPF-elastic-net to a lasso.

    Appends p diagonal rows carrying the per-block l2 terms; requires every
    alpha_s in (0, 1] (per-block pure ridge is unreachable by this reduction).
    The emitted lambda_star accounts for the solver's 1/(2 m rows) loss
    normalization over the n + p augmented rows.
    """
    if cfg.method not in ("sipf_elastic_net", "ipf_elastic_net", "elastic_net"):
        raise ConfigError(f"method {cfg.method!r} is not an elastic-net family method")
    ratios = cfg.ratio_vector(ds.n_blocks)
    alphas = cfg.alpha_vector(ds.n_blocks)
    if (alphas <= 0).any():
        raise ConfigError("the elastic-net augmentation requires alpha_s in (0, 1]")
    n, p, m = ds.n, ds.p, ds.m
    scales = _feature_scales(ds, ratios, alphas)
    lam_s = cfg.lambda1 * ratios
    # diagonal entry for features of block s: scale_s * sqrt(m n lambda_s (1 - alpha_s))
    diag_per_block = np.sqrt(m * n * lam_s * (1.0 - alphas))
    diag = np.repeat(diag_per_block, ds.block_sizes) * scales
    Xstar = np.empty((n + p, p), order="F")
    Xstar[:n] = ds.X * scales[None, :]
    Xstar[n:] = np.diag(diag)
    Ystar = np.zeros((n + p, m))
    Ystar[:n] = ds.Y
    return AugmentedProblem(
        Xstar=Xstar,
        Ystar=Ystar,
        lambda_star=cfg.lambda1 * n / (n + p),
        col_scales=scales,
        extra_rows=p,
        block_sizes=ds.block_sizes,
    )


@dataclass(frozen=True)
class PenaltyGroup:
    """One penalized submatrix: feature rows, response columns, weight, norm order.

    ``rows=None`` means every penalized feature row. ``q`` is 1, 2 or inf; the
    shipped solvers reject inf.
    """

    cols: tuple[int, ...]
    weight: float
    q: float = 2.0
    rows: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.cols) == 0 or (self.rows is not None and len(self.rows) == 0):
            raise ConfigError("penalty groups must be nonempty")
        if not (self.weight > 0 and np.isfinite(self.weight)):
            raise ConfigError("group weights must be positive")
        if self.q not in (1.0, 2.0, math.inf):
            raise ConfigError("group norm order q must be 1, 2 or inf")


@dataclass(frozen=True)
class GroupSpec:
    """A collection of penalty groups plus explicitly unpenalized feature rows."""

    groups: tuple[PenaltyGroup, ...]
    unpenalized_rows: frozenset[int] = frozenset()

    def validate(self, p: int, m: int) -> None:
        covered = set(self.unpenalized_rows)
        for g in self.groups:
            rows = range(p) if g.rows is None else g.rows
            for j in rows:
                if not 0 <= j < p:
                    raise ConfigError(f"group row index {j} out of range for p={p}")
                covered.add(j)
            for k in g.cols:
                if not 0 <= k < m:
                    raise ConfigError(f"group column index {k} out of range for m={m}")
        if covered != set(range(p)):
            missing = sorted(set(range(p)) - covered)[:5]
            raise ConfigError(
                "every penalized feature must be covered by a group or be "
                f"marked unpenalized; first missing rows: {missing}"
            )


def prop1_augment(ds: Dataset, groups: GroupSpec, cfg: PenaltyConfig) -> AugmentedProblem:
    """Column scaling for generic weighted-group IPF penalties.

    The group structure and weights pass through unchanged; uncovered
    (explicitly unpenalized) features stay in the loss unscaled.
    """
    groups.validate(ds.p, ds.m)
    ratios = cfg.ratio_vector(ds.n_blocks)
    skip = np.zeros(ds.p, dtype=bool)
    if groups.unpenalized_rows:
        skip[sorted(groups.unpenalized_rows)] = True
    scales = _feature_scales(ds, ratios, skip=skip)
    return AugmentedProblem(
        Xstar=ds.X * scales[None, :],
        Ystar=np.asarray(ds.Y),
        lambda_star=cfg.lambda1,
        col_scales=scales,
        extra_rows=0,
        block_sizes=ds.block_sizes,
    )


def back_transform(Bstar: np.ndarray, aug: AugmentedProblem) -> np.ndarray:
    """Original coefficients: row j of B equals col_scales[j] times row j of Bstar."""
    Bstar = np.asarray(Bstar, dtype=float)
    if Bstar.shape[0] != aug.col_scales.shape[0]:
        raise ConfigError(
            f"Bstar has {Bstar.shape[0]} rows, expected {aug.col_scales.shape[0]}"
        )
    return Bstar * aug.col_scales[:, None]


def group_penalty(B: np.ndarray, groups: GroupSpec,
                  feature_lambdas: np.ndarray) -> float:
    """Evaluate sum_g w_g sum_{j in M_g} lambda_j ||B[j, N_g]||_q.

    ``feature_lambdas`` carries the per-feature penalty level (lambda_s for
    features of block s; a constant vector gives the non-IPF penalty).
    """
    B = np.asarray(B, dtype=float)
    lam = np.asarray(feature_lambdas, dtype=float)
    total = 0.0
    for g in groups.groups:
        rows = np.arange(B.shape[0]) if g.rows is None else np.asarray(g.rows)
        sub = B[np.ix_(rows, np.asarray(g.cols))]
        if g.q == 1.0:
            norms = np.abs(sub).sum(axis=1)
        elif g.q == 2.0:
            norms = np.sqrt((sub * sub).sum(axis=1))
        else:
            norms = np.abs(sub).max(axis=1)
        total += g.weight * float(lam[rows] @ norms)
    return total


def load_groups(path) -> GroupSpec:
    """Read a GroupSpec from JSON: [{rows, cols, weight, q}], 1-based indices."""
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        entries = raw.get("groups", [])
        unpen = frozenset(int(j) - 1 for j in raw.get("unpenalized_rows", []))
    else:
        entries, unpen = raw, frozenset()
    groups = []
    for e in entries:
        q = e.get("q", 2)
        q = math.inf if q == "inf" else float(q)
        rows = e.get("rows")
        groups.append(PenaltyGroup(
            cols=tuple(int(k) - 1 for k in e["cols"]),
            weight=float(e["weight"]),
            q=q,
            rows=None if rows is None else tuple(int(j) - 1 for j in rows),
        ))
    return GroupSpec(groups=tuple(groups), unpenalized_rows=unpen)


def save_groups(spec: GroupSpec, path) -> None:
    out = {
        "groups": [
            {
                "rows": None if g.rows is None else [j + 1 for j in g.rows],
                "cols": [k + 1 for k in g.cols],
                "weight": g.weight,
                "q": "inf" if g.q == math.inf else int(g.q),
            }
            for g in spec.groups
        ],
        "unpenalized_rows": sorted(j + 1 for j in spec.unpenalized_rows),
    }
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)
