"""Tests for CSV/Markdown reports and the figure writer."""

import csv
import os

import numpy as np
import pytest

from cxr_net.datapipe.folds import plan_folds
from cxr_net.errors import FormatError
from cxr_net.metrics import evaluate
from cxr_net.nn.graph import ParamCount
from cxr_net.report_generator import (
    PREDICTION_COLUMNS,
    ReportConfig,
    ReportGenerator,
    align_predictions,
    read_predictions_csv,
    read_truth_csv,
)
from cxr_net.trainer import EpochRecord, TrainHistory
from cxr_net.visualizer import Visualizer
from cxr_net.wst import ScatterConfig, get_filterbank, scatter


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def reports(tmp_path):
    return ReportGenerator(ReportConfig(output_dir=str(tmp_path)))


@pytest.fixture
def history():
    return TrainHistory("dice", [EpochRecord(1, 0.9, 0.4, 0.8, 0.5), EpochRecord(2, 0.7, 0.6, 0.75, 0.7)],
                        best_epoch=2)


@pytest.fixture
def report():
    scores = np.r_[np.full(8, 0.9), np.full(2, 0.1), np.full(2, 0.9), np.full(8, 0.1)]
    labels = np.r_[np.ones(10), np.zeros(10)].astype(int)
    return evaluate(scores, labels)


class TestReportGenerator:

    def test_history_csv(self, reports, history):
        rows = read_rows(reports.save_history_csv(history))
        assert list(rows[0]) == ["epoch", "train_loss", "train_dice", "val_loss", "val_dice", "best"]
        assert [r["best"] for r in rows] == ["0", "1"]
        assert float(rows[1]["val_dice"]) == 0.7

    def test_history_csv_is_reproducible(self, reports, history):
        first = open(reports.save_history_csv(history, "a.csv")).read()
        assert open(reports.save_history_csv(history, "b.csv")).read() == first

    def test_eval_and_roc_csv(self, reports, report):
        (row,) = read_rows(reports.save_eval_csv({"ensemble": report}))
        assert row["name"] == "ensemble"
        assert (row["tp"], row["fn"], row["fp"], row["tn"]) == ("8", "2", "2", "8")
        assert float(row["accuracy"]) == pytest.approx(0.8)
        roc = read_rows(reports.save_roc_csv({"ensemble": report}))
        assert len(roc) == len(report.roc_curve)
        assert (float(roc[0]["fpr"]), float(roc[0]["tpr"])) == (0.0, 0.0)

    def test_predictions_round_trip(self, reports):
        probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
        path = reports.save_predictions_csv(["a", "b", "c"], probs)
        rows = read_rows(path)
        assert list(rows[0]) == PREDICTION_COLUMNS
        assert [r["predicted"] for r in rows] == ["covid_pos", "covid_neg", "covid_pos"]
        assert read_predictions_csv(path) == {"a": 0.7, "b": 0.2, "c": 0.5}

    def test_fold_plan_csv(self, reports, disc_samples):
        plan = plan_folds(disc_samples, k=3, seed=0)
        rows = read_rows(reports.save_fold_plan_csv(plan, disc_samples))
        assert len(rows) == 3 * 12
        assert sum(r["side"] == "val" for r in rows) == 12

    def test_markdown(self, reports):
        counts = ParamCount({"block1/conv": 10, "block1/norm": 4, "head": 6}, 20, 4)
        path = reports.save_markdown({"Parameters": reports.param_table(counts)}, {"seed": 1})
        text = open(path).read()
        assert text.startswith("# CXR-Net run summary")
        assert "| block1 | 14 |" in text and "**20**" in text
        assert '"seed": 1' in text

    def test_cv_table(self, reports):
        lines = reports.cv_table({"mean": {"roc_auc": 0.9}, "std": {"roc_auc": 0.05}})
        assert lines[-1] == "| 0.9000 (0.0500) |"


class TestReaders:

    def test_truth_csv(self, tmp_path):
        path = tmp_path / "truth.csv"
        path.write_text("id,label,group\na,covid_pos,g\nb,0,g\nc,1,h\n")
        assert read_truth_csv(str(path)) == {"a": 1, "b": 0, "c": 1}

    def test_truth_csv_unknown_label(self, tmp_path):
        path = tmp_path / "truth.csv"
        path.write_text("id,label\na,maybe\n")
        with pytest.raises(FormatError):
            read_truth_csv(str(path))

    def test_prediction_csv_columns(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("name,score\na,0.5\n")
        with pytest.raises(FormatError):
            read_predictions_csv(str(path))

    def test_align(self, caplog):
        scores, labels = align_predictions({"b": 0.2, "a": 0.9, "x": 0.5}, {"a": 1, "b": 0, "c": 1})
        np.testing.assert_array_equal(scores, [0.9, 0.2])
        np.testing.assert_array_equal(labels, [1, 0])
        assert "no prediction" in caplog.text


class TestVisualizer:

    def test_plots_are_written(self, tmp_path, history, report, disc_samples):
        viz = Visualizer(str(tmp_path))
        saved = viz.generate_all_plots({"seg": history}, {"fold1": report, "fold2": report})
        saved.append(viz.plot_fold_partition(plan_folds(disc_samples, k=3, seed=0), disc_samples))
        assert len(saved) == 3
        assert all(os.path.getsize(p) > 0 for p in saved)

    def test_empty_history_is_skipped(self, tmp_path):
        assert Visualizer(str(tmp_path)).plot_history(TrainHistory("dice")) is None

    def test_filterbank_and_scattering_grids(self, tmp_path, rng):
        cfg = ScatterConfig(J=2, L=3, H=16, W=20)
        fb = get_filterbank(cfg)
        out = scatter(rng.uniform(size=(16, 20)), fb, cfg)
        viz = Visualizer(str(tmp_path))
        paths = [viz.plot_filterbank(fb), viz.plot_scattering(out.coeffs, out.path_index)]
        assert [os.path.basename(p) for p in paths] == ["filterbank.png", "scattering.png"]
        assert all(os.path.getsize(p) > 0 for p in paths)
