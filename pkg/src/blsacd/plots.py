"""Static figure rendering for diagnostic and study reports.

All figures use the non-interactive Agg backend and default to SVG with a
fixed hash salt and no embedded creation date, so re-running a command
reproduces the output files byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "blsacd"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _save(fig, path):
    path = str(path)
    kwargs = {"metadata": {"Date": None}} if path.endswith(".svg") else {}
    fig.savefig(path, **kwargs)
    plt.close(fig)


def qq_plot(path, points, label: str) -> None:
    """Residual QQ scatter against the reference-law quantiles."""
    points = np.asarray(points, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(points[:, 0], points[:, 1], s=8, alpha=0.6, edgecolors="none")
    top = float(points.max())
    ax.plot([0.0, top], [0.0, top], color="black", linewidth=1.0)
    ax.set_xlabel("theoretical quantile")
    ax.set_ylabel("empirical quantile")
    ax.set_title(f"residual QQ, {label}")
    fig.tight_layout()
    _save(fig, path)


def acf_plot(path, acf, pacf, band: float) -> None:
    """Stem panels of the residual ACF and PACF with white-noise bands."""
    lags = np.arange(1, len(acf) + 1)
    fig, axes = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
    for ax, vals, name in zip(axes, (acf, pacf), ("ACF", "PACF")):
        ax.vlines(lags, 0.0, vals, linewidth=1.5)
        ax.axhline(0.0, color="black", linewidth=0.8)
        for sign in (1.0, -1.0):
            ax.axhline(sign * band, color="gray", linestyle="--", linewidth=0.8)
        ax.set_ylabel(name)
    axes[1].set_xlabel("lag")
    fig.tight_layout()
    _save(fig, path)


def band_plot(path, timestamps, series, band) -> None:
    """Observed out-of-sample durations inside their prediction bands."""
    t = np.asarray(timestamps, dtype=float)
    fig, axes = plt.subplots(2, 1, figsize=(7.0, 5.0), sharex=True)
    panels = (
        (series.y1, band.lower1, band.upper1, "margin 1"),
        (series.y2, band.lower2, band.upper2, "margin 2"),
    )
    for ax, (y, lo, hi, name) in zip(axes, panels):
        ax.fill_between(t, lo, hi, alpha=0.3, linewidth=0.0)
        ax.plot(t, y, linewidth=0.7)
        ax.set_yscale("log")
        ax.set_ylabel(name)
    axes[1].set_xlabel("t")
    fig.suptitle(f"{band.nominal:.0%} one-step-ahead prediction bands")
    fig.tight_layout()
    _save(fig, path)


def rmse_plot(path, report) -> None:
    """RMSE of every parameter against the sample size, one line per rho."""
    rows = report.rows()
    params = sorted({r[2] for r in rows})
    rhos = sorted({r[1] for r in rows})
    ncol = 3
    nrow = (len(params) + ncol - 1) // ncol
    fig, axes = plt.subplots(
        nrow, ncol, figsize=(3.2 * ncol, 2.6 * nrow), squeeze=False,
    )
    for i, name in enumerate(params):
        ax = axes[i // ncol][i % ncol]
        for rho in rhos:
            pts = sorted(
                (r[0], r[5]) for r in rows if r[2] == name and r[1] == rho
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", markersize=3, label=f"rho={rho:g}")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("T", fontsize=8)
        ax.set_ylabel("RMSE", fontsize=8)
        ax.tick_params(labelsize=7)
    for j in range(len(params), nrow * ncol):
        axes[j // ncol][j % ncol].axis("off")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def profile_plot(path, profile, nu_hat: float) -> None:
    """Profile log-likelihood over the shape-parameter grid."""
    nus = [p[0] for p in profile]
    lls = [p[1] for p in profile]
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(nus, lls, marker="o", markersize=3)
    ax.axvline(nu_hat, color="gray", linestyle="--", linewidth=0.8)
    ax.set_xlabel("nu")
    ax.set_ylabel("profile log-likelihood")
    fig.tight_layout()
    _save(fig, path)
