"""Matplotlib figures written next to the CSV reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evalstats import SCORE_NAMES  # noqa: E402
from .labels import CLASSES  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_pr_curves(report, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 3, figsize=(9, 5.5), sharex=True, sharey=True)
        for k, (ax, cls) in enumerate(zip(axes.flat, CLASSES)):
            c = report.curves[k]
            ax.step(c.recall, c.precision, where="post", color="k", lw=1.2)
            p, r = report.scores[k][0], report.scores[k][1]
            ax.plot([r], [p], "o", color="tab:red", ms=4)
            ax.set_title(cls)
            ax.set_xlim(0, 1.02)
            ax.set_ylim(0, 1.02)
        for ax in axes[-1]:
            ax.set_xlabel("recall")
        for ax in axes[:, 0]:
            ax.set_ylabel("precision")
        fig.suptitle(f"micro AP = {report.micro_ap:.3f}")
        return _save(fig, path)


def plot_bootstrap(boot, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 4, figsize=(11, 3), sharey=True)
        for si, (ax, name) in enumerate(zip(axes, SCORE_NAMES)):
            ax.boxplot([boot.samples[:, k, si] for k in range(len(CLASSES))],
                       flierprops={"marker": "d", "ms": 3})
            ax.set_xticks(np.arange(1, len(CLASSES) + 1), CLASSES, rotation=45)
            ax.set_title(name)
        return _save(fig, path)


def plot_hr_vs_prediction(hr, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        rng = np.random.default_rng(0)
        for present in (False, True):
            rows = [r for r in hr.rows if r[2] == present]
            if not rows:
                continue
            x = float(present) + rng.uniform(-0.15, 0.15, len(rows))
            y = np.array([r[1] for r in rows])
            ok = np.array([r[4] for r in rows])
            ax.scatter(x[ok], y[ok], s=8, color="tab:blue", label="correct" if present else None)
            ax.scatter(x[~ok], y[~ok], s=12, color="tab:red", marker="x",
                       label="wrong" if present else None)
        ax.axhline(hr.line_bpm, color="k", ls="--", lw=0.8)
        ax.set_xticks([0, 1], [f"no {hr.cls}", hr.cls])
        ax.set_ylabel("heart rate (bpm)")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="best")
        return _save(fig, path)
