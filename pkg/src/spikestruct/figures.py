"""Figure rendering for the CLI report paths.

Every subcommand that emits delimited output also drops a PNG next to it;
plots are rendered headlessly and the CSV files remain the primary record.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, out_path: Path, digest: str | None) -> None:
    metadata = {"manifest": digest} if digest else None
    fig.savefig(out_path, dpi=150, metadata=metadata)
    plt.close(fig)


def plot_phase_curve(curve, pca_curve, out_path: Path, title: str,
                     digest: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(curve.lambdas, curve.mmse_spike, "-", color="tab:red", label="replica spike MMSE")
    ax.plot(curve.lambdas, curve.mmse_vector, "--", color="tab:blue", label="replica vector MMSE")
    if pca_curve is not None:
        ax.plot(curve.lambdas, pca_curve, ":", color="tab:green", label="spectral PCA (spike)")
    ax2 = ax.twinx()
    ax2.plot(curve.lambdas, curve.mi_per_component, "-.", color="0.4", label="mutual information")
    ax2.set_ylabel("mutual information per component")
    ax.set_xlabel(r"signal-to-noise ratio $\lambda$")
    ax.set_ylabel("MMSE")
    ax.set_title(title)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, out_path, digest)


def plot_tap_aggregate(lambdas, means, stds, replica_mmse, pca_theory, out_path: Path,
                       title: str, digest: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.errorbar(lambdas, means, yerr=stds, fmt="o", color="tab:blue", capsize=3,
                label="TAP (mean over trials)")
    ax.plot(lambdas, replica_mmse, "-", color="tab:red", label="replica spike MMSE")
    finite = np.isfinite(pca_theory)
    if finite.any():
        pca_mse = 1.0 - np.asarray(pca_theory) ** 2
        ax.plot(np.asarray(lambdas)[finite], pca_mse[finite], ":", color="tab:green",
                label="spectral PCA")
    ax.set_xlabel(r"signal-to-noise ratio $\lambda$")
    ax.set_ylabel("spike MSE")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, out_path, digest)


def plot_surrogate_trajectories(traj_structured, traj_surrogate, replica_mmse,
                                out_path: Path, title: str,
                                digest: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(traj_structured, "-", color="tab:blue", label="structured noise")
    ax.plot(traj_surrogate, "--", color="tab:orange", label="gaussian surrogate")
    ax.axhline(replica_mmse, color="k", ls=":", label="replica MMSE")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean spike MSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, out_path, digest)


def plot_equivalence_report(records, out_path: Path, title: str,
                            digest: str | None = None) -> None:
    lambdas = [r["lambda"] for r in records]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.semilogy(lambdas, [max(r["gap_m"], 1e-18) for r in records], "o-", label=r"$|m_{SE}-m_*|$")
    ax.semilogy(lambdas, [max(r["gap_mhat"], 1e-18) for r in records], "s--",
                label=r"$|\hat m_{SE}-\hat m_*|$")
    ax.semilogy(lambdas, [max(r["sup_gap_phi"], 1e-18) for r in records], "^:",
                label=r"$\sup|1-\phi-J|$")
    ax.set_xlabel(r"signal-to-noise ratio $\lambda$")
    ax.set_ylabel("gap")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, out_path, digest)


def plot_ingested_spectrum(record, rho, dv_table, j_table, out_path: Path, title: str,
                           digest: str | None = None) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 3.6))
    axes[0].hist(record.eigenvalues, bins=60, density=True, color="0.8", label="standardized sample")
    axes[0].plot(rho.nodes, rho.pdf(rho.nodes), "-", color="tab:red", label="smoothed density")
    axes[0].set_xlabel("eigenvalue")
    axes[0].legend(fontsize=7)
    axes[1].plot(dv_table[:, 0], dv_table[:, 1], "-", color="tab:blue")
    axes[1].set_xlabel("x")
    axes[1].set_ylabel("V'(x)")
    axes[2].plot(j_table[:, 0], j_table[:, 1], "-", color="tab:green")
    axes[2].set_xlabel("x")
    axes[2].set_ylabel("J(x)")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, out_path, digest)
