"""Figure rendering for the CLI report paths (CV curves, tuner traces,
study boxplots). Figures are written next to the delimited output files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def save_cv_curve(cv_df: pd.DataFrame, path) -> None:
    """Mean CV loss over the lambda path with a one-SE band."""
    fig, ax = plt.subplots(figsize=(6, 4))
    lam = cv_df["lambda"].to_numpy()
    mean = cv_df["mean_mse_cv"].to_numpy()
    se = cv_df["se"].to_numpy()
    ax.plot(lam, mean, marker=".", lw=1.2, color="tab:blue")
    ax.fill_between(lam, mean - se, mean + se, alpha=0.25, color="tab:blue")
    best = int(np.argmin(mean))
    ax.axvline(lam[best], color="tab:red", ls="--", lw=1,
               label=f"selected $\\lambda$ = {lam[best]:.4g}")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("CV mean squared error")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_tuner_trace(trace_df: pd.DataFrame, path) -> None:
    """Per-evaluation loss and the running incumbent."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(trace_df["eval"], trace_df["loss"], "o", ms=4, alpha=0.7,
            label="evaluation")
    ax.step(trace_df["eval"], trace_df["incumbent_loss"], where="post",
            color="tab:red", lw=1.5, label="incumbent")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("CV loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_study_boxplot(study_df: pd.DataFrame, path, metric: str = "mse_val") -> None:
    """Boxplot of a validation metric per method, one point per replicate."""
    methods = list(dict.fromkeys(study_df["method"]))
    data = [study_df.loc[study_df["method"] == m, metric].dropna().to_numpy()
            for m in methods]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(methods), 4))
    ax.boxplot(data, tick_labels=methods)
    ax.set_ylabel(metric)
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
