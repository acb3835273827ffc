"""Report rendering: delimited output plus matplotlib figures.

Figures are written next to the CSV/JSON artifacts so a run directory is
self-describing: a training loss curve per seed and an edge-marginal
heatmap per evaluation.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def write_loss_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "db_loss", "log_reward"])
        for row in curve:
            writer.writerow([row["epoch"], repr(row["db_loss"]),
                             repr(row["log_reward"])])


def plot_loss_curve(curve, path, title="training"):
    epochs = [row["epoch"] for row in curve]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [row["db_loss"] for row in curve], lw=1.5)
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("detailed-balance loss")
    ax2.plot(epochs, [row["log_reward"] for row in curve], lw=1.5, color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("mean log reward")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_marginals(marginals, path, labels=None, title="edge marginals"):
    marginals = np.asarray(marginals)
    fig, ax = plt.subplots(figsize=(4.4, 4))
    im = ax.imshow(marginals, vmin=0, vmax=1, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if labels is not None:
        # outline edges present in the reference labels
        for i, j in zip(*np.nonzero(np.asarray(labels))):
            ax.add_patch(plt.Rectangle((j - 0.5, i - 0.5), 1, 1, fill=False,
                                       edgecolor="red", lw=1.2))
    ax.set_xlabel("parent variable")
    ax.set_ylabel("target variable")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_eval_rows_csv(rows, path):
    """Aggregation row format: one line per seed plus a mean/std footer."""
    fields = ["run_id", "n", "seed", "bayes_shd", "auc", "params",
              "wall_seconds"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([row[f] for f in fields])
        if len(rows) > 1:
            shds = np.array([r["bayes_shd"] for r in rows], dtype=float)
            aucs = np.array([r["auc"] for r in rows], dtype=float)
            writer.writerow(["mean", rows[0]["n"], "-",
                             repr(float(shds.mean())), repr(float(aucs.mean())),
                             rows[0]["params"], "-"])
            writer.writerow(["std", rows[0]["n"], "-",
                             repr(float(shds.std())), repr(float(aucs.std())),
                             rows[0]["params"], "-"])
