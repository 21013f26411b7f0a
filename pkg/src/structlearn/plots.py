"""Figure rendering for training reports and benchmark curves.

Every CSV the command-line tools emit gets a PNG rendered next to it, so a
training run leaves both the raw numbers and something a human can glance
at.  Uses the Agg backend; safe on headless machines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def figure_path_for(report_path) -> str:
    """report.csv -> report.png; extensionless paths get .png appended."""
    text = str(report_path)
    stem, dot, ext = text.rpartition(".")
    if dot and "/" not in ext and "\\" not in ext:
        return f"{stem}.png"
    return f"{text}.png"


def render_train_report(report, png_path) -> None:
    """Two panels: objectives per epoch, training accuracy over time."""
    rows = report.rows
    epochs = [r.epoch for r in rows]
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.plot(epochs, [r.primal for r in rows], marker="o", label="primal")
    if any(r.dual is not None for r in rows):
        left.plot(
            epochs,
            [r.dual for r in rows],
            marker="s",
            label="dual",
        )
    left.set_xlabel("epoch")
    left.set_ylabel("objective")
    left.legend()
    left.set_title(report.config.get("algorithm", "training"))
    right.plot([r.seconds for r in rows], [r.train_accuracy for r in rows], marker="o")
    right.set_xlabel("training seconds")
    right.set_ylabel("train accuracy")
    right.set_ylim(-0.02, 1.02)
    right.set_title("accuracy vs time")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


def render_benchmark(points, config, png_path) -> None:
    """Test metric against cumulative training seconds for one run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p[0] for p in points], [p[1] for p in points], marker="o")
    ax.set_xlabel("training seconds")
    ax.set_ylabel("test metric")
    ax.set_ylim(-0.02, 1.02)
    algo = config.get("algorithm", "?")
    task = config.get("task", "?")
    ax.set_title(f"{task} / {algo}")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
