"""Figure rendering for study reports (PNG files next to the CSV/JSON)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_lattice(lattice, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    if lattice.dim == 1:
        y = np.zeros(lattice.n_sites)
        ax.scatter(lattice.coords[:, 0], y, c=lattice.boundary_mask, cmap="coolwarm", s=18)
        ax.set_yticks([])
    else:
        ax.scatter(lattice.coords[:, 0], lattice.coords[:, 1],
                   c=lattice.boundary_mask, cmap="coolwarm", s=12)
        ax.set_aspect("equal")
    ax.set_title(f"level k={lattice.k}: {lattice.n_sites} sites, "
                 f"{int(lattice.boundary_mask.sum())} on the graph boundary")
    return _finish(fig, path)


def plot_ladder(ks, values, ylabel, title, path, reference=None):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.semilogy(ks, values, "o-", label=ylabel)
    if reference is not None:
        ax.axhline(reference, color="gray", ls="--", lw=1, label="target")
    ax.set_xlabel("level k")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def plot_series(x, ys: dict, xlabel, ylabel, title, path, logy=False,
                logx=False, hlines=()):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, vals in ys.items():
        ax.plot(x, vals, "o-", label=label)
    for level, label in hlines:
        ax.axhline(level, color="gray", ls="--", lw=1)
        ax.annotate(label, (x[0], level), fontsize=8, va="bottom")
    if logy:
        ax.set_yscale("log")
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_trajectory(trajectory, path, title="local time along one path"):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(trajectory.times, trajectory.values, lw=1)
    ax.set_xlabel("time")
    ax.set_ylabel("accumulated local time")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_profile(x, curves: dict, xlabel, title, path):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, vals in curves.items():
        ax.plot(x, vals, lw=1.2, label=label)
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)
