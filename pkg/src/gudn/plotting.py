"""Static charts for experiment runs: metric bars and loss-decay curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .harness import RunRecord


def load_runs(runs_dir: Path | str) -> list[tuple[str, RunRecord]]:
    """All run.json records under a directory, keyed by their subdirectory."""
    runs_dir = Path(runs_dir)
    found = sorted(runs_dir.rglob("run.json"))
    runs = []
    for path in found:
        name = path.parent.name if path.parent != runs_dir else runs_dir.name
        runs.append((name, RunRecord.load(path)))
    return runs


def plot_metric_bars(runs: list[tuple[str, RunRecord]], ax: "plt.Axes") -> None:
    """Grouped P@k bars, one group per run."""
    ks = sorted(runs[0][1].metrics.precision) if runs else []
    width = 0.8 / max(len(ks), 1)
    for j, k in enumerate(ks):
        xs = [i + j * width for i in range(len(runs))]
        ys = [rec.metrics.precision.get(k, 0.0) for _, rec in runs]
        ax.bar(xs, ys, width=width, label=f"P@{k}")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(runs))])
    ax.set_xticklabels([name for name, _ in runs], rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("precision")
    ax.legend(fontsize=8)
    ax.set_title("test precision by run")


def plot_loss_decay(runs: list[tuple[str, RunRecord]], ax: "plt.Axes") -> None:
    """Per-epoch feature/link/class loss curves for every run."""
    for name, rec in runs:
        epochs = range(len(rec.losses))
        for term, style in (("feature", "-"), ("link", "--"), ("class", ":")):
            ys = [row[term] for row in rec.losses]
            ax.plot(epochs, ys, style, label=f"{name}:{term}", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("summed loss")
    ax.set_title("loss decay")
    if runs:
        ax.legend(fontsize=6)


def plot_runs(runs: list[tuple[str, RunRecord]], out_path: Path | str) -> Path:
    """Write a two-panel figure (metric bars, loss curves) as PNG or SVG."""
    if not runs:
        raise ValueError("no runs to plot")
    out_path = Path(out_path)
    if out_path.suffix.lower() not in (".png", ".svg"):
        raise ValueError(f"unsupported plot format {out_path.suffix!r}; use .png or .svg")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    plot_metric_bars(runs, ax1)
    plot_loss_decay(runs, ax2)
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
