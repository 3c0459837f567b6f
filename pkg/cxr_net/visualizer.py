"""
Visualization Module

Optional matplotlib figures for a run:
- Training and validation loss/metric curves
- Per-fold ROC curves with their mean
- Fold partition strip chart (train/val per fold, class row, group row)
- Filter-bank and scattering-channel image grids
"""

import logging
import os
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.patches as mpatches  # noqa: E402
from matplotlib import colors as mcolors  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datapipe.folds import FoldPlan  # noqa: E402
from .datapipe.samples import Sample  # noqa: E402
from .metrics import EvalReport, mean_roc  # noqa: E402
from .trainer import TrainHistory  # noqa: E402
from .wst import FilterBank, PathDescriptor  # noqa: E402

logger = logging.getLogger(__name__)


class Visualizer:
    """
    Creates PNG figures in one output directory.
    """

    COLORS = {
        "train": "#3498db",
        "val": "#e74c3c",
        "mean": "#2c3e50",
        "covid_pos": "#c0392b",
        "covid_neg": "#27ae60",
    }
    DPI = 150

    def __init__(self, output_dir: str = "results"):
        """
        Initialize the visualizer.

        Args:
            output_dir: Directory to save generated plots
        """
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

        plt.rcParams["figure.figsize"] = (10, 6)
        plt.rcParams["font.size"] = 10
        plt.rcParams["axes.titlesize"] = 13
        plt.rcParams["axes.labelsize"] = 11

    def _save(self, fig, filename: str) -> str:
        filepath = os.path.join(self.output_dir, filename)
        fig.savefig(filepath, dpi=self.DPI, bbox_inches="tight")
        plt.close(fig)
        logger.debug("Saved %s", filepath)
        return filepath

    def plot_history(self, history: TrainHistory, name: str = "history") -> Optional[str]:
        """Loss and metric curves of one training run."""
        if not history.records:
            return None
        epochs = [r.epoch for r in history.records]
        fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(13, 5))
        fig.suptitle(f"Training history: {name}", fontsize=14, fontweight="bold")
        ax_loss.plot(epochs, [r.train_loss for r in history.records], color=self.COLORS["train"],
                     marker="o", markersize=3, label="train")
        ax_loss.plot(epochs, [r.val_loss for r in history.records], color=self.COLORS["val"],
                     marker="s", markersize=3, label="validation")
        ax_metric.plot(epochs, [r.train_metric for r in history.records], color=self.COLORS["train"],
                       marker="o", markersize=3, label="train")
        ax_metric.plot(epochs, [r.val_metric for r in history.records], color=self.COLORS["val"],
                       marker="s", markersize=3, label="validation")
        for ax, label in ((ax_loss, "loss"), (ax_metric, history.metric_name)):
            if history.best_epoch:
                ax.axvline(history.best_epoch, color="#95a5a6", linestyle="--", linewidth=1)
            ax.set_xlabel("Epoch")
            ax.set_ylabel(label)
            ax.legend()
            ax.grid(alpha=0.3)
        return self._save(fig, f"{name}_curves.png")

    def plot_roc(self, reports: Dict[str, EvalReport], filename: str = "roc.png") -> Optional[str]:
        """One ROC curve per report plus their vertical mean."""
        if not reports:
            return None
        fig, ax = plt.subplots(figsize=(7, 7))
        cmap = plt.get_cmap("tab10")
        for i, (name, rep) in enumerate(reports.items()):
            fpr = [p[0] for p in rep.roc_curve]
            tpr = [p[1] for p in rep.roc_curve]
            ax.plot(fpr, tpr, color=cmap(i % 10), linewidth=1.2, alpha=0.8,
                    label=f"{name} (AUC {rep.roc_auc:.3f})")
        if len(reports) > 1:
            grid, tpr = mean_roc([rep.roc_curve for rep in reports.values()])
            ax.plot(grid, tpr, color=self.COLORS["mean"], linewidth=2.5, label="mean")
        ax.plot([0, 1], [0, 1], color="#bdc3c7", linestyle=":")
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title("ROC curves")
        ax.legend(loc="lower right", fontsize=8)
        ax.set_aspect("equal")
        return self._save(fig, filename)

    def plot_fold_partition(self, plan: FoldPlan, samples: Sequence[Sample],
                            filename: str = "folds.png") -> str:
        """Strip chart: one row per fold (val highlighted), then class and group rows."""
        n = len(samples)
        order = np.array(sorted(range(n), key=lambda i: (samples[i].group, samples[i].id)), dtype=int)
        rows = [(plan.assignment[order] == f).astype(float) for f in range(plan.k)]
        classes = np.array([1.0 if samples[i].is_positive else 0.0 for i in order])
        groups = np.array([samples[i].group for i in order])
        group_ids = np.cumsum(np.r_[0, groups[1:] != groups[:-1]]) % 2

        fig, ax = plt.subplots(figsize=(12, 0.5 * (plan.k + 2) + 1))
        for f, row in enumerate(rows):
            colours = np.where(row[:, None] > 0, mcolors.to_rgb(self.COLORS["val"]),
                               mcolors.to_rgb(self.COLORS["train"]))
            ax.imshow(colours[None], aspect="auto", extent=(0, n, f + 1, f), interpolation="nearest")
        class_rgb = np.where(classes[:, None] > 0, mcolors.to_rgb(self.COLORS["covid_pos"]),
                             mcolors.to_rgb(self.COLORS["covid_neg"]))
        ax.imshow(class_rgb[None], aspect="auto", extent=(0, n, plan.k + 1, plan.k),
                  interpolation="nearest")
        ax.imshow(group_ids[None], aspect="auto", cmap="Greys", vmin=0, vmax=2,
                  extent=(0, n, plan.k + 2, plan.k + 1), interpolation="nearest")
        ax.set_xlim(0, n)
        ax.set_ylim(plan.k + 2, 0)
        ax.set_yticks(np.arange(plan.k + 2) + 0.5)
        ax.set_yticklabels([f"fold {f + 1}" for f in range(plan.k)] + ["class", "group"])
        ax.set_xlabel("Samples (sorted by group)")
        ax.legend(handles=[mpatches.Patch(color=self.COLORS[k], label=k)
                           for k in ("train", "val", "covid_pos", "covid_neg")],
                  loc="upper center", bbox_to_anchor=(0.5, -0.25), ncol=4)
        return self._save(fig, filename)

    def plot_filterbank(self, fb: FilterBank, filename: str = "filterbank.png") -> str:
        """Centred |psi_hat| per (j, theta) and the low-pass phi_hat."""
        J, L = fb.psi_hat.shape[:2]
        fig, axes = plt.subplots(J + 1, L, figsize=(2 * L, 2 * (J + 1)), squeeze=False)
        for j in range(J):
            for t in range(L):
                axes[j, t].imshow(np.fft.fftshift(np.abs(fb.psi_hat[j, t])), cmap="magma")
                axes[j, t].set_title(f"j={j} t={t}", fontsize=8)
        axes[J, 0].imshow(np.fft.fftshift(np.abs(fb.phi_hat)), cmap="magma")
        axes[J, 0].set_title("phi", fontsize=8)
        for ax in axes.flat:
            ax.axis("off")
        fig.suptitle(f"Filter bank J={J} L={L} (LP bounds {fb.lp_min:.3f}..{fb.lp_max:.3f})")
        return self._save(fig, filename)

    def plot_scattering(self, coeffs: np.ndarray, paths: Sequence[PathDescriptor],
                        filename: str = "scattering.png", max_channels: int = 49) -> str:
        """Grid of scattering channels [h, w, C] labelled by path."""
        count = min(coeffs.shape[-1], max_channels)
        cols = int(np.ceil(np.sqrt(count)))
        rows = int(np.ceil(count / cols))
        fig, axes = plt.subplots(rows, cols, figsize=(1.8 * cols, 1.8 * rows), squeeze=False)
        for c, ax in enumerate(axes.flat):
            ax.axis("off")
            if c >= count:
                continue
            ax.imshow(coeffs[..., c], cmap="gray")
            p = paths[c]
            label = "S0" if p.order == 0 else (
                f"S1 {p.j1},{p.theta1}" if p.order == 1 else f"S2 {p.j1},{p.theta1}/{p.j2},{p.theta2}")
            ax.set_title(label, fontsize=6)
        return self._save(fig, filename)

    def generate_all_plots(self, histories: Dict[str, TrainHistory],
                           reports: Dict[str, EvalReport] = None) -> List[str]:
        """
        Generate history curves for every run and the ROC figure.

        Returns:
            List of paths to saved plot files
        """
        saved = [self.plot_history(h, name) for name, h in histories.items()]
        if reports:
            saved.append(self.plot_roc(reports))
        return [p for p in saved if p]
