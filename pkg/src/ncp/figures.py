"""Figure rendering for the comparison outputs.

Each renderer takes the rows already written to the delimited report and
draws the matching picture next to it.  Rendering is a presentation step
only: the delimited file remains the primary, byte-stable artifact.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_sweep(path, positions, exact, approx) -> None:
    """Exact vs amortized conditional probabilities along the probe line.

    ``exact`` and ``approx`` are (n_locations, K+1) arrays.
    """
    exact = np.asarray(exact)
    approx = np.asarray(approx)
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    n_opts = exact.shape[1]
    colors = plt.cm.tab10(np.linspace(0, 1, 10))
    for k in range(n_opts):
        label = f"cluster {k + 1}" if k < n_opts - 1 else "new cluster"
        ax.plot(positions, exact[:, k], color=colors[k % 10], lw=1.8, label=f"exact, {label}")
        ax.plot(positions, approx[:, k], color=colors[k % 10], lw=1.2, ls="--",
                label=f"model, {label}")
    ax.set_xlabel("probe position")
    ax.set_ylabel("assignment probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_diagnostics(path, iterations, nll, accuracy, perm_variance) -> None:
    """Three stacked training curves: accuracy, NLL, permutation variance."""
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 7.5), sharex=True)
    axes[0].plot(iterations, accuracy, lw=1.2, color="tab:blue")
    axes[0].set_ylabel("accuracy")
    axes[1].plot(iterations, nll, lw=1.2, color="tab:orange")
    axes[1].set_yscale("log")
    axes[1].set_ylabel("mean NLL")
    axes[2].plot(iterations, np.maximum(perm_variance, 1e-12), lw=1.2, color="tab:green")
    axes[2].set_yscale("log")
    axes[2].set_ylabel("perm. variance")
    axes[2].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_mean_k(path, summary) -> None:
    """Median and interquartile band of the mean-cluster-count estimates per budget."""
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    styles = {"ncp-is": ("tab:blue", "o"), "gibbs": ("tab:red", "s")}
    for method, (color, marker) in styles.items():
        entries = sorted(
            (e for e in summary if e["method"] == method), key=lambda e: e["budget"]
        )
        if not entries:
            continue
        budgets = [e["budget"] for e in entries]
        med = [e["median"] for e in entries]
        lo = [e["q25"] for e in entries]
        hi = [e["q75"] for e in entries]
        ax.plot(budgets, med, color=color, marker=marker, lw=1.4, label=method)
        ax.fill_between(budgets, lo, hi, color=color, alpha=0.2)
    ax.set_xscale("log")
    ax.set_xlabel("samples")
    ax.set_ylabel("estimated mean cluster count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
