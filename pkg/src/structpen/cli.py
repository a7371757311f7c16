"""Command-line entry point: simulate, fit, tune, evaluate and study.

Every command writes a manifest.json (config hash, seed, package version)
into its output directory; reruns with equal manifests produce equal outputs
(the study's wall_time_s column aside). Exit codes: 0 success, 2 usage or
configuration error, 3 numerical failure.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__, plotting
from .cd import CdOptions
from .data import (FitResult, PenaltyConfig, assemble_dataset, predict,
                   read_matrix_csv, write_matrix_csv)
from .errors import ConfigError, NumericalError, StructpenError
from .selection import TuneOptions, tune_and_fit
from .simulation import (STUDY_COLUMNS, ScenarioSpec, _run_rep, evaluate,
                         load_scenario, simulate_dataset, summarize_study,
                         true_coefficients)
from .spg import SpgOptions
from .tree import from_json as tree_from_json
from .tuner import trace_frame
from .fitting import fit_on_dataset


class _NumericalFailure(click.ClickException):
    exit_code = 3


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalError as exc:
            raise _NumericalFailure(str(exc))
        except ConfigError as exc:
            raise click.UsageError(str(exc))
        except StructpenError as exc:
            raise click.ClickException(str(exc))
    return wrapper


def _default_threads() -> int:
    env = os.environ.get("STRUCTPEN_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigError(f"STRUCTPEN_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out: Path, command: str, config: dict, extra: dict | None = None):
    manifest = {
        "artifact": "structpen",
        "version": __version__,
        "command": command,
        "seed": config.get("seed"),
        "config": config,
        "config_hash": _config_hash(config),
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _load_design(y_path, x_paths, u_path, blocks):
    ydf = read_matrix_csv(y_path)
    xdfs = [read_matrix_csv(p) for p in x_paths]
    for p, xdf in zip(x_paths, xdfs):
        if list(xdf.index) != list(ydf.index):
            raise ConfigError(f"row identifiers of {p} do not match {y_path}")
    X = pd.concat(xdfs, axis=1)
    sizes = [df.shape[1] for df in xdfs]
    if blocks:
        try:
            sizes = [int(s) for s in blocks.split(",")]
        except ValueError:
            raise ConfigError(f"--blocks must be comma-separated integers, got {blocks!r}")
        if sum(sizes) != X.shape[1]:
            raise ConfigError(
                f"--blocks {sizes} does not sum to the {X.shape[1]} feature columns"
            )
    mats = np.split(X.to_numpy(), np.cumsum(sizes)[:-1], axis=1)
    U = u_ids = None
    if u_path:
        udf = read_matrix_csv(u_path)
        if list(udf.index) != list(ydf.index):
            raise ConfigError(f"row identifiers of {u_path} do not match {y_path}")
        U, u_ids = udf.to_numpy(), tuple(udf.columns)
    return assemble_dataset(
        ydf.to_numpy(), mats, U=U,
        row_ids=tuple(str(r) for r in ydf.index),
        y_ids=tuple(ydf.columns), x_ids=tuple(X.columns), u_ids=u_ids,
    )


def _parse_floats(text, what):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--{what} must be comma-separated numbers, got {text!r}")


def _penalty_config(method, lambda1, ratios, alpha, alphas, rho_star):
    return PenaltyConfig(
        method=method,
        lambda1=lambda1,
        ratios=_parse_floats(ratios, "ratios") if ratios else None,
        alphas=(_parse_floats(alphas, "alphas") if alphas
                else ((alpha,) if alpha is not None else None)),
        rho_star=rho_star,
    )


METHOD_CHOICES = click.Choice([
    "lasso", "elastic_net", "ipf_lasso", "sipf_elastic_net",
    "ipf_elastic_net", "tree_lasso", "ipf_tree_lasso",
])


@click.group()
@click.version_option(__version__)
def cli():
    """Structured penalized multivariate regression toolkit."""


@cli.command()
@click.option("--scenario", required=True, help="Scenario JSON path or bundled name.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@_handle_errors
def simulate(scenario, out, seed):
    """Draw one training/validation pair from a scenario and write CSVs."""
    spec = load_scenario(scenario)
    if seed is not None:
        spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": seed})
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, B_true = simulate_dataset(spec)
    x_ids = ([f"x1_{j + 1}" for j in range(spec.p1)]
             + [f"x2_{j + 1}" for j in range(spec.p2)])
    y_ids = [f"y{k + 1}" for k in range(spec.m)]
    for tag, ds in (("train", train), ("val", val)):
        rows = [f"{tag}{i + 1}" for i in range(ds.n)]
        write_matrix_csv(out / f"{tag}_Y.csv", ds.Y, rows, y_ids)
        write_matrix_csv(out / f"{tag}_X.csv", ds.X, rows, x_ids)
    write_matrix_csv(out / "B_true.csv", B_true, x_ids, y_ids)
    _write_manifest(out, "simulate", spec.to_dict(), extra={
        "true_nonzeros": int((B_true != 0).sum()),
        "block_sizes": [spec.p1, spec.p2],
        "outputs": ["train_Y.csv", "train_X.csv", "val_Y.csv", "val_X.csv",
                    "B_true.csv", "manifest.json"],
    })
    click.echo(f"wrote 6 files to {out}")


_common_fit_options = [
    click.option("--method", required=True, type=METHOD_CHOICES),
    click.option("--y", "y_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--x", "x_paths", required=True, multiple=True,
                 type=click.Path(exists=True, dir_okay=False),
                 help="Feature block CSV; repeat in block order."),
    click.option("--u", "u_path", default=None, type=click.Path(exists=True, dir_okay=False),
                 help="Unpenalized covariate CSV."),
    click.option("--blocks", default=None,
                 help="Comma-separated block sizes splitting a concatenated X file."),
    click.option("--tree", "tree_path", default=None,
                 type=click.Path(exists=True, dir_okay=False),
                 help="Tree JSON; skips response clustering."),
    click.option("--rho-star", default=0.95, show_default=True),
    click.option("--tol", default=1e-5, show_default=True),
    click.option("--max-iter", default=None, type=int,
                 help="Max CD sweeps / SPG iterations."),
    click.option("--out", required=True, type=click.Path(file_okay=False)),
    click.option("--seed", default=0, show_default=True, type=int),
]


def _add_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


def _solver_opts(tol, max_iter):
    cd_opts = CdOptions(tol=tol, max_sweeps=max_iter or 1000)
    spg_opts = SpgOptions(tol=tol, max_iter=max_iter or 5000)
    return cd_opts, spg_opts


@cli.command()
@_add_options(_common_fit_options)
@click.option("--lambda1", required=True, type=float, help="Penalty level.")
@click.option("--ratios", default=None, help="Comma-separated lambda_s/lambda_1 (first 1).")
@click.option("--alpha", default=None, type=float, help="Shared elastic-net mixing.")
@click.option("--alphas", default=None, help="Comma-separated per-block mixing values.")
@click.option("--warm", "warm_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="FitResult JSON used as a warm start.")
@_handle_errors
def fit(method, y_path, x_paths, u_path, blocks, tree_path, rho_star, tol,
        max_iter, out, seed, lambda1, ratios, alpha, alphas, warm_path):
    """Fit one model at fixed penalty parameters."""
    ds = _load_design(y_path, x_paths, u_path, blocks)
    cfg = _penalty_config(method, lambda1, ratios, alpha, alphas, rho_star)
    tree = tree_from_json(tree_path) if tree_path else None
    warm = None
    if warm_path:
        with open(warm_path) as fh:
            warm = FitResult.from_dict(json.load(fh))
    cd_opts, spg_opts = _solver_opts(tol, max_iter)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result, _ = fit_on_dataset(ds, cfg, tree=tree, cd_opts=cd_opts,
                                   spg_opts=spg_opts, warm=warm)
    except NumericalError as exc:
        with open(out / "diagnostics.json", "w") as fh:
            json.dump({"error": str(exc), "method": method}, fh, indent=1)
        raise
    with open(out / "fit.json", "w") as fh:
        json.dump(result.to_dict(), fh)
    Yhat = predict(result, ds.X, U=ds.U)
    write_matrix_csv(out / "predictions.csv", Yhat,
                     ds.row_ids or range(1, ds.n + 1),
                     ds.y_ids or range(1, ds.m + 1))
    config = {"command": "fit", "method": method, "seed": seed,
              "penalty": cfg.to_dict(), "tol": tol, "max_iter": max_iter}
    _write_manifest(out, "fit", config, extra={
        "n_nonzero": result.n_nonzero, "converged": bool(result.converged),
        "n_iter": int(result.n_iter),
    })
    click.echo(f"fit written to {out} ({result.n_nonzero} nonzero coefficients)")


@cli.command()
@_add_options(_common_fit_options)
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--n-lambda", default=50, show_default=True, type=int)
@click.option("--min-ratio", default=None, type=float)
@click.option("--n-init", default=None, type=int)
@click.option("--max-evals", default=30, show_default=True, type=int)
@click.option("--ei-tol", default=1e-2, show_default=True, type=float)
@click.option("--threads", default=None, type=int)
@click.option("--plots/--no-plots", default=True, show_default=True)
@_handle_errors
def tune(method, y_path, x_paths, u_path, blocks, tree_path, rho_star, tol,
         max_iter, out, seed, folds, n_lambda, min_ratio, n_init, max_evals,
         ei_tol, threads, plots):
    """Select penalty parameters by cross-validation and refit."""
    ds = _load_design(y_path, x_paths, u_path, blocks)
    cd_opts, spg_opts = _solver_opts(tol, max_iter)
    opts = TuneOptions(
        folds=folds, seed=seed, n_lambda=n_lambda, min_ratio=min_ratio,
        rho_star=rho_star, n_init=n_init, max_evals=max_evals, ei_tol=ei_tol,
        cd_opts=cd_opts, spg_opts=spg_opts,
    )
    result, state, cv = tune_and_fit(ds, method, opts)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cv_df = pd.DataFrame({
        "lambda": cv.lambdas, "mean_mse_cv": cv.mean_mse,
        "se": cv.se_mse, "n_nonzero": cv.n_nonzero,
    })
    cv_df.to_csv(out / "cv_curve.csv", index=False)
    if state is not None:
        trace_frame(state).to_csv(out / "tuner_trace.csv", index=False)
    sel = result.penalty
    with open(out / "selected.json", "w") as fh:
        json.dump({**sel.to_dict(), "cv_mse": cv.best_mse,
                   "n_evals": state.n_evals if state else 0}, fh, indent=1)
    with open(out / "fit.json", "w") as fh:
        json.dump(result.to_dict(), fh)
    if plots:
        plotting.save_cv_curve(cv_df, out / "cv_curve.png")
        if state is not None:
            plotting.save_tuner_trace(trace_frame(state), out / "tuner_trace.png")
    config = {"command": "tune", "method": method, "seed": seed,
              "folds": folds, "n_lambda": n_lambda, "min_ratio": min_ratio,
              "rho_star": rho_star, "n_init": n_init, "max_evals": max_evals,
              "ei_tol": ei_tol, "tol": tol, "threads": threads}
    _write_manifest(out, "tune", config, extra={"selected": sel.to_dict()})
    click.echo(f"selected lambda1 = {sel.lambda1:.6g} (CV MSE {cv.best_mse:.6g})")


@cli.command("evaluate")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--y", "y_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--x", "x_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--u", "u_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--blocks", default=None)
@click.option("--b-true", "b_true_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@_handle_errors
def evaluate_cmd(fit_path, y_path, x_paths, u_path, blocks, b_true_path, out):
    """Score a saved fit on held-out data (support metrics need --b-true)."""
    ds = _load_design(y_path, x_paths, u_path, blocks)
    with open(fit_path) as fh:
        result = FitResult.from_dict(json.load(fh))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if b_true_path:
        B_true = read_matrix_csv(b_true_path).to_numpy()
        metrics = evaluate(result, B_true, ds).to_dict()
    else:
        Yhat = predict(result, ds.X, U=ds.U)
        resid = ds.Y - Yhat
        mse = float((resid ** 2).sum()) / (ds.m * ds.n)
        centered = ds.Y - ds.Y.mean(axis=0)
        sst = float((centered ** 2).sum())
        metrics = {"mse_val": mse,
                   "r2_val": 1.0 - float((resid ** 2).sum()) / sst if sst > 0 else np.nan,
                   "vs": result.n_nonzero}
    pd.DataFrame([metrics]).to_csv(out / "metrics.csv", index=False)
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=1)
    _write_manifest(out, "evaluate", {"command": "evaluate", "fit": str(fit_path),
                                      "seed": None})
    click.echo(json.dumps(metrics))


@cli.command()
@click.option("--scenario", required=True)
@click.option("--methods", required=True,
              help="Comma-separated subset of the seven methods.")
@click.option("--reps", default=10, show_default=True, type=int)
@click.option("--folds", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=None, type=int)
@click.option("--n-lambda", default=50, show_default=True, type=int)
@click.option("--min-ratio", default=None, type=float)
@click.option("--rho-star", default=0.95, show_default=True, type=float)
@click.option("--n-init", default=None, type=int)
@click.option("--max-evals", default=30, show_default=True, type=int)
@click.option("--ei-tol", default=1e-2, show_default=True, type=float)
@click.option("--tol", default=1e-5, show_default=True, type=float)
@click.option("--max-iter", default=None, type=int)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--plots/--no-plots", default=True, show_default=True)
@_handle_errors
def study(scenario, methods, reps, folds, seed, threads, n_lambda, min_ratio,
          rho_star, n_init, max_evals, ei_tol, tol, max_iter, out, plots):
    """Repeated simulate/tune/evaluate benchmark over a scenario."""
    from joblib import Parallel, delayed

    spec = load_scenario(scenario)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    for m in method_list:
        if m not in METHOD_CHOICES.choices:
            raise ConfigError(f"unknown method {m!r}")
    threads = threads or _default_threads()
    cd_opts, spg_opts = _solver_opts(tol, max_iter)
    tune_opts = TuneOptions(
        folds=folds, n_lambda=n_lambda, min_ratio=min_ratio, rho_star=rho_star,
        n_init=n_init, max_evals=max_evals, ei_tol=ei_tol,
        cd_opts=cd_opts, spg_opts=spg_opts,
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rep_seeds = [int(c.generate_state(1)[0])
                 for c in np.random.SeedSequence(int(seed)).spawn(reps)]
    study_path = out / "study.csv"
    rows = []
    with open(study_path, "w") as fh:
        fh.write(",".join(STUDY_COLUMNS) + "\n")
        fh.flush()
        # waves of size `threads`, flushed as they finish, so an interrupted
        # run still leaves a valid partial CSV
        for start in range(0, reps, threads):
            wave = range(start, min(start + threads, reps))
            chunks = Parallel(n_jobs=min(threads, len(wave)))(
                delayed(_run_rep)(spec, method_list, r + 1, rep_seeds[r], tune_opts)
                for r in wave
            )
            for chunk in chunks:
                for row in chunk:
                    rows.append(row)
                    fh.write(",".join(str(row[c]) for c in STUDY_COLUMNS) + "\n")
                fh.flush()
    df = pd.DataFrame(rows, columns=list(STUDY_COLUMNS))
    summarize_study(df).to_csv(out / "summary.csv", index=False)
    df[["rep", "method", "mse_val"]].to_csv(out / "plot_data.csv", index=False)
    if plots:
        plotting.save_study_boxplot(df, out / "mse_boxplot.png")
    config = {"command": "study", "scenario": spec.to_dict(), "methods": method_list,
              "reps": reps, "folds": folds, "seed": seed, "n_lambda": n_lambda,
              "min_ratio": min_ratio, "rho_star": rho_star, "n_init": n_init,
              "max_evals": max_evals, "ei_tol": ei_tol, "tol": tol}
    n_ok = int(df["mse_val"].notna().sum())
    _write_manifest(out, "study", config, extra={"rows_ok": n_ok,
                                                 "rows_total": len(df)})
    click.echo(f"study written to {out} ({n_ok}/{len(df)} method runs succeeded)")
    if len(df) and n_ok / len(df) < 0.8:
        raise _NumericalFailure("more than 20% of study runs failed")


def main(argv=None):
    try:
        return cli.main(args=argv, standalone_mode=True)
    except StructpenError as exc:  # raised outside command bodies
        click.echo(f"Error: {exc}", err=True)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
