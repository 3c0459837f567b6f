"""
Report Generator Module

Writes run outputs:
- Training history CSVs (no wall-clock columns, so reruns are byte-identical)
- EvalReport metric rows and ROC point tables
- Prediction and fold-plan CSVs
- A Markdown run summary with per-layer parameter breakdowns

Every file is written atomically.
"""

import csv
import io
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .datapipe.folds import FoldPlan
from .datapipe.samples import NEGATIVE, POSITIVE, Sample
from .errors import FormatError
from .fileio import atomic_write_text
from .metrics import EvalReport, SegReport
from .nn.graph import ParamCount
from .trainer import TrainHistory

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["id", "p_covid", "p_noncovid", "predicted"]


@dataclass
class ReportConfig:
    """Configuration for report generation."""
    title: str = "CXR-Net run summary"
    decimal_places: int = 4
    output_dir: str = "results"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


class ReportGenerator:
    """
    Writes CSV and Markdown reports into one output directory.
    """

    def __init__(self, config: ReportConfig = None):
        """
        Initialize the report generator.

        Args:
            config: Report configuration options
        """
        self.config = config or ReportConfig()
        os.makedirs(self.config.output_dir, exist_ok=True)

    def _path(self, filename: str) -> str:
        return os.path.join(self.config.output_dir, filename)

    def _write_csv(self, filename: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        filepath = self._path(filename)
        atomic_write_text(filepath, _csv_text(header, rows))
        logger.debug("Wrote %s", filepath)
        return filepath

    def _fmt(self, value: float) -> str:
        return f"{value:.{self.config.decimal_places}f}"

    # CSV outputs

    def save_history_csv(self, history: TrainHistory, filename: str = "history.csv") -> str:
        metric = history.metric_name
        return self._write_csv(
            filename,
            ["epoch", "train_loss", f"train_{metric}", "val_loss", f"val_{metric}", "best"],
            ([r.epoch, r.train_loss, r.train_metric, r.val_loss, r.val_metric,
              int(r.epoch == history.best_epoch)] for r in history.records),
        )

    def save_eval_csv(self, reports: Dict[str, EvalReport], filename: str = "metrics.csv") -> str:
        """One metrics row per named report (a fold, the ensemble, ...)."""
        columns = ["n", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1", "dice",
                   "roc_auc"]
        return self._write_csv(
            filename, ["name"] + columns,
            ([name] + [rep.as_row()[c] for c in columns] for name, rep in reports.items()),
        )

    def save_roc_csv(self, reports: Dict[str, EvalReport], filename: str = "roc.csv") -> str:
        rows = []
        for name, rep in reports.items():
            rows.extend([name, fpr, tpr, thr] for fpr, tpr, thr in rep.roc_curve)
        return self._write_csv(filename, ["name", "fpr", "tpr", "threshold"], rows)

    def save_segmentation_csv(self, reports: Dict[str, SegReport],
                              filename: str = "segmentation_metrics.csv") -> str:
        columns = ["dice", "precision", "recall", "f1", "accuracy"]
        return self._write_csv(
            filename, ["name"] + columns,
            ([name] + [rep.as_row()[c] for c in columns] for name, rep in reports.items()),
        )

    def save_predictions_csv(self, ids: Sequence[str], probs: np.ndarray,
                             filename: str = "predictions.csv") -> str:
        return self._write_csv(
            filename, PREDICTION_COLUMNS,
            ([i, float(p[0]), float(p[1]), POSITIVE if p[0] >= 0.5 else NEGATIVE]
             for i, p in zip(ids, probs)),
        )

    def save_fold_plan_csv(self, plan: FoldPlan, samples: Sequence[Sample],
                           filename: str = "folds.csv") -> str:
        rows = []
        for fold in range(plan.k):
            for i, s in enumerate(samples):
                side = "val" if plan.assignment[i] == fold else "train"
                rows.append([fold + 1, i, s.id, side, s.label or "", s.group])
        return self._write_csv(filename, ["fold", "index", "id", "side", "label", "group"], rows)

    def save_manifest_csv(self, samples: Sequence[Sample], filename: str = "manifest.csv") -> str:
        return self._write_csv(
            filename, ["index", "id", "label", "group", "height", "width"],
            ([i, s.id, s.label or "", s.group, s.shape[0], s.shape[1]]
             for i, s in enumerate(samples)),
        )

    # Markdown

    def param_table(self, counts: ParamCount, depth: int = 1) -> List[str]:
        lines = ["| Layer group | Parameters |", "|-------------|-----------:|"]
        for name, n in counts.group_by_prefix(depth).items():
            lines.append(f"| {name} | {n:,} |")
        lines.append(f"| **total trainable** | **{counts.total:,}** |")
        if counts.non_trainable:
            lines.append(f"| non-trainable (running statistics) | {counts.non_trainable:,} |")
        return lines

    def cv_table(self, summary: Dict[str, Dict[str, float]]) -> List[str]:
        names = list(summary["mean"])
        lines = ["| " + " | ".join(names) + " |", "|" + "|".join("---" for _ in names) + "|"]
        lines.append("| " + " | ".join(
            f"{self._fmt(summary['mean'][n])} ({self._fmt(summary['std'][n])})" for n in names
        ) + " |")
        return lines

    def save_markdown(self, sections: Dict[str, List[str]], config: Optional[dict] = None,
                      filename: str = "summary.md") -> str:
        """
        Save a Markdown summary.

        Args:
            sections: Heading -> body lines, in order
            config: Resolved configuration, rendered as JSON
            filename: Name of the output file

        Returns:
            Path to the saved file
        """
        lines = [f"# {self.config.title}", ""]
        if config is not None:
            lines += ["## Configuration", "", "```json",
                      json.dumps(config, indent=2, sort_keys=True, default=str), "```", ""]
        for heading, body in sections.items():
            lines += [f"## {heading}", ""] + list(body) + [""]
        filepath = self._path(filename)
        atomic_write_text(filepath, "\n".join(lines))
        return filepath


def read_predictions_csv(path: str) -> Dict[str, float]:
    """Map sample id to p_covid from a prediction CSV."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"id", "p_covid"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: prediction CSV needs 'id' and 'p_covid' columns")
        try:
            return {row["id"]: float(row["p_covid"]) for row in reader}
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def read_truth_csv(path: str) -> Dict[str, int]:
    """Map sample id to 1 (covid_pos) or 0 (covid_neg) from an ``id,label`` CSV."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"id", "label"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: truth CSV needs 'id' and 'label' columns")
        truth = {}
        for row in reader:
            label = row["label"].strip()
            if label in (POSITIVE, "1"):
                truth[row["id"]] = 1
            elif label in (NEGATIVE, "0"):
                truth[row["id"]] = 0
            else:
                raise FormatError(f"{path}: unknown label {label!r} for {row['id']}")
    return truth


def align_predictions(predictions: Dict[str, float], truth: Dict[str, int]) -> Tuple[np.ndarray, np.ndarray]:
    """(scores, labels) over ids present in both files, in sorted id order."""
    ids = sorted(set(predictions) & set(truth))
    missing = sorted(set(truth) - set(predictions))
    if missing:
        logger.warning("%d truth ids have no prediction, e.g. %s", len(missing), missing[:3])
    return (np.array([predictions[i] for i in ids]), np.array([truth[i] for i in ids]))
