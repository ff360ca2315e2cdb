"""PNG renderings of the CSV figure data written by the CLI."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def read_columns(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: [r[k] for r in rows] for k in rows[0]}


def plot_latent_histogram(csv_path, png_path):
    cols = read_columns(csv_path)
    centers = [float(v) for v in cols["bin_center"]]
    mass = [float(v) for v in cols["mass"]]
    uniform = [float(v) for v in cols["uniform"]]
    width = (centers[1] - centers[0]) if len(centers) > 1 else 1.0
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(centers, mass, width=width * 0.9, color="tab:blue", label="encoder angles")
    ax.plot(centers, uniform, color="tab:red", label="uniform")
    ax.set_xlabel("angle (rad)")
    ax.set_ylabel("mass")
    ax.legend()
    fig.tight_layout()
    return _save(fig, png_path)


def plot_metrics(csv_path, png_path, columns=("L_real", "L_fake", "eq3", "eq8a", "eq8b", "k_t")):
    cols = read_columns(csv_path)
    if not cols:
        return None
    step = [int(v) for v in cols["step"]]
    shown = [c for c in columns if c in cols]
    fig, axes = plt.subplots(len(shown), 1, figsize=(6, 1.6 * len(shown)), sharex=True, squeeze=False)
    for ax, c in zip(axes[:, 0], shown):
        ax.plot(step, [float(v) for v in cols[c]], lw=0.8)
        ax.set_ylabel(c)
    axes[-1, 0].set_xlabel("step")
    fig.tight_layout()
    return _save(fig, png_path)


def plot_coverage(csv_path, png_path):
    cols = read_columns(csv_path)
    modes = [int(v) for v in cols["mode"]]
    hits = [int(v) for v in cols["hits"]]
    covered = [v == "1" for v in cols["covered"]]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(modes, hits, color=["tab:green" if c else "tab:gray" for c in covered])
    ax.set_xlabel("mode")
    ax.set_ylabel("samples within 3 sigma")
    fig.tight_layout()
    return _save(fig, png_path)


def plot_trials(csv_path, png_path, p_star=0.5):
    cols = read_columns(csv_path)
    n = [int(v) for v in cols["n"]]
    rate = [float(v) for v in cols["duplicate_rate"]]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(n, rate, marker="o")
    ax.axhline(p_star, color="tab:red", ls="--")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size N")
    ax.set_ylabel("duplicate rate")
    fig.tight_layout()
    return _save(fig, png_path)
