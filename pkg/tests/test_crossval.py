"""Tests for cross-validated member training."""

import dataclasses

import numpy as np
import pytest

from cxr_net import crossval
from cxr_net.classifier import ClassifierModel, ClfConfig, build_ensemble, build_member
from cxr_net.config import Config
from cxr_net.crossval import cv_summary, run_cross_validation, score_samples, train_fold
from cxr_net.datapipe.bundle import DatasetBundle
from cxr_net.datapipe.folds import plan_folds
from cxr_net.datapipe.phantoms import PhantomGenerator
from cxr_net.datapipe.samples import NEGATIVE, POSITIVE, positive_flags
from cxr_net.metrics import evaluate
from cxr_net.trainer import TrainConfig

TRAIN = TrainConfig(epochs=1, batch_size=4, seed=2)


@pytest.fixture
def bundle(disc_samples):
    return DatasetBundle.from_samples(disc_samples)


@pytest.fixture
def plan(disc_samples):
    return plan_folds(disc_samples, k=3, seed=0)


class TestCrossValidation:

    def test_one_member_per_fold(self, bundle, plan, small_clf_config):
        results = run_cross_validation(bundle, plan, small_clf_config, TRAIN)
        assert [r.fold for r in results] == [0, 1, 2]
        assert sum(r.n_val for r in results) == 12
        for r, (_, val) in zip(results, plan.folds):
            np.testing.assert_array_equal(r.val_index, val)
            assert np.all((r.val_scores > 0) & (r.val_scores < 1))
            assert r.report is not None and r.report.n_samples == r.n_val
            assert len(r.history.records) == 1

    def test_scores_come_from_the_kept_weights(self, bundle, plan, small_clf_config):
        result = train_fold(bundle, plan, 1, small_clf_config, TRAIN)
        member = build_member(small_clf_config)
        member.set_weights(result.weights)
        model = ClassifierModel(member, small_clf_config, result.mean, result.std)
        val = [bundle.samples[i] for i in result.val_index]
        np.testing.assert_allclose(score_samples(model, val), result.val_scores, atol=1e-12)

    def test_statistics_come_from_the_training_portion(self, bundle, plan, small_clf_config,
                                                        monkeypatch):
        seen = {}
        original = crossval.train_clf

        def spy(member, train, val, cfg, clf_cfg, mean, std, class_weights, verbose=False):
            seen.update(mean=mean, std=std, class_weights=list(class_weights))
            return original(member, train, val, cfg, clf_cfg, mean, std, class_weights, verbose)

        monkeypatch.setattr(crossval, "train_clf", spy)
        train_index, val_index = plan.fold(0)
        result = train_fold(bundle, plan, 0, small_clf_config, TrainConfig(epochs=0))
        expected = DatasetBundle.from_samples(bundle.samples, train_index)
        assert seen == {"mean": expected.mean, "std": expected.std,
                        "class_weights": expected.class_weights}
        assert (result.mean, result.std) == (expected.mean, expected.std)
        assert result.class_weights == expected.class_weights
        assert result.mean != bundle.mean

    def test_validation_samples_do_not_move_the_statistics(self, disc_samples, plan,
                                                          small_clf_config):
        _, val_index = plan.fold(0)
        altered = list(disc_samples)
        for i in val_index:
            flipped = NEGATIVE if altered[i].label == POSITIVE else POSITIVE
            altered[i] = dataclasses.replace(altered[i], image=1.0 - altered[i].image, label=flipped)
        a = train_fold(DatasetBundle.from_samples(disc_samples), plan, 0, small_clf_config,
                       TrainConfig(epochs=0))
        b = train_fold(DatasetBundle.from_samples(altered), plan, 0, small_clf_config,
                       TrainConfig(epochs=0))
        assert (a.mean, a.std, a.class_weights) == (b.mean, b.std, b.class_weights)

    def test_folds_use_offset_seeds(self, bundle, plan, small_clf_config):
        a = train_fold(bundle, plan, 0, small_clf_config, TRAIN)
        b = train_fold(bundle, plan, 0, small_clf_config, TRAIN)
        c = train_fold(bundle, plan, 1, small_clf_config, TRAIN)
        np.testing.assert_array_equal(a.val_scores, b.val_scores)
        key = "block1/shortcut/kernel"
        assert not np.array_equal(a.weights[key], c.weights[key])

    def test_parallel_matches_serial(self, bundle, plan, small_clf_config, monkeypatch):
        monkeypatch.setattr(Config, "THREADS", "2")
        serial = run_cross_validation(bundle, plan, small_clf_config, TRAIN, workers=1)
        parallel = run_cross_validation(bundle, plan, small_clf_config, TRAIN, workers=2)
        for s, p in zip(serial, parallel):
            assert s.fold == p.fold
            np.testing.assert_array_equal(s.val_scores, p.val_scores)

    def test_summary(self, bundle, plan, small_clf_config):
        results = run_cross_validation(bundle, plan, small_clf_config, TRAIN)
        summary = cv_summary(results, bundle)
        aucs = [r.report.roc_auc for r in results]
        assert summary["mean"]["roc_auc"] == pytest.approx(np.mean(aucs))
        assert summary["std"]["roc_auc"] == pytest.approx(np.std(aucs, ddof=1))
        assert summary["pooled"].n_samples == 12
        assert set(summary["mean"]) == {"accuracy", "precision", "recall", "f1", "dice", "roc_auc"}

    @pytest.mark.slow
    def test_six_fold_ensemble_on_phantoms(self):
        samples = [s for s, _ in PhantomGenerator(64, seed=17).generate(360, 0.4)]
        test = [s for s, _ in PhantomGenerator(64, seed=29).generate(120, 0.4)]
        bundle = DatasetBundle.from_samples(samples)
        plan = plan_folds(samples, k=6, seed=0)
        # patients carry 2-3 images each
        assert all(abs(len(v) - 60) <= 3 and len(t) + len(v) == 360 for t, v in plan.folds)
        cfg = ClfConfig(scatter=ClfConfig().scatter.with_shape(64, 64), heads=2, head_size=16)
        results = run_cross_validation(bundle, plan, cfg,
                                       TrainConfig(epochs=60, batch_size=13, seed=0))
        assert np.mean([r.report.roc_auc for r in results]) >= 0.90

        truth = positive_flags(test)
        members, member_aucs = [], []
        for r in results:
            member = build_member(cfg, name=f"member{r.fold + 1}")
            member.set_weights(r.weights)
            members.append(member)
            model = ClassifierModel(member, cfg, r.mean, r.std)
            member_aucs.append(evaluate(score_samples(model, test), truth).roc_auc)
        pooled = bundle.refit(np.unique(np.concatenate([t for t, _ in plan.folds])))
        em = build_ensemble(members, cfg, pooled.mean, pooled.std, input_shape=[64, 64])
        ensemble_auc = evaluate(score_samples(em, test), truth).roc_auc
        assert ensemble_auc >= 0.90
        assert ensemble_auc >= np.mean(member_aucs) - 0.02
