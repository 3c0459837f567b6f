"""
Cross-validated member training

Trains one classifier member per fold of a FoldPlan, scores it on the
fold's validation samples and summarizes the folds as mean (std). Folds
may run in worker processes; results always come back in fold order.
"""

import dataclasses
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .classifier import ClassifierModel, ClfConfig, build_member, train_clf
from .config import Config
from .datapipe.bundle import DatasetBundle
from .datapipe.folds import FoldPlan
from .datapipe.samples import positive_flags
from .errors import ValidationError
from .metrics import EvalReport, evaluate
from .trainer import TrainConfig, TrainHistory

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ("accuracy", "precision", "recall", "f1", "dice", "roc_auc")


@dataclass
class FoldResult:
    """
    One trained member and its validation scores.

    Attributes:
        fold: 0-based fold index
        weights: Best-validation weights of the member
        history: Per-epoch training history
        report: Validation EvalReport (None when the fold is single-class)
        val_index: Bundle indices of the validation samples
        val_scores: p_covid per validation sample
        mean: Standardization mean of the fold's training portion
        std: Standardization std of the fold's training portion
        class_weights: Class weights of the fold's training portion
    """
    fold: int
    weights: Dict[str, np.ndarray]
    history: TrainHistory
    report: Optional[EvalReport]
    val_index: np.ndarray
    val_scores: np.ndarray
    mean: float = 0.0
    std: float = 1.0
    class_weights: List[float] = field(default_factory=lambda: [1.0, 1.0])

    @property
    def n_val(self) -> int:
        return int(self.val_index.size)


def score_samples(model: ClassifierModel, samples, batch_size: int = 16) -> np.ndarray:
    """p_covid for each sample."""
    probs = model.predict_proba([s.image for s in samples], [s.float_mask for s in samples],
                                batch_size)
    return probs[:, 0]


def train_fold(bundle: DatasetBundle, plan: FoldPlan, fold: int, clf_cfg: ClfConfig,
               train_cfg: TrainConfig, verbose: bool = False) -> FoldResult:
    """
    Train and validate the member of one fold; seeds are offset by the fold index.

    Standardization statistics and class weights come from the fold's
    training portion, never from its validation samples.
    """
    train_index, val_index = plan.fold(fold)
    stats = bundle.refit(train_index)
    train = [bundle.samples[i] for i in train_index]
    val = [bundle.samples[i] for i in val_index]
    cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + fold)
    member = build_member(clf_cfg, seed=cfg.seed, name=f"member{fold + 1}")
    history = train_clf(member, train, val, cfg, clf_cfg, stats.mean, stats.std,
                        stats.class_weights, verbose)
    model = ClassifierModel(member, clf_cfg, stats.mean, stats.std)
    scores = score_samples(model, val, train_cfg.batch_size)
    try:
        report = evaluate(scores, positive_flags(val))
    except ValidationError as exc:
        logger.warning("Fold %d: %s", fold + 1, exc)
        report = None
    if report is not None:
        logger.info("Fold %d: val AUC %.4f, accuracy %.4f", fold + 1, report.roc_auc, report.accuracy)
    return FoldResult(fold, member.get_weights(), history, report, val_index, scores,
                      stats.mean, stats.std, list(stats.class_weights))


def run_cross_validation(bundle: DatasetBundle, plan: FoldPlan, clf_cfg: ClfConfig,
                         train_cfg: TrainConfig, workers: int = 1,
                         verbose: bool = False) -> List[FoldResult]:
    """
    Train every fold.

    Args:
        workers: Parallel worker processes, capped by Config.threads()

    Returns:
        FoldResults in fold order
    """
    workers = max(1, min(workers, Config.threads(), plan.k))
    if workers == 1:
        return [train_fold(bundle, plan, f, clf_cfg, train_cfg, verbose) for f in range(plan.k)]
    logger.info("Training %d folds on %d workers", plan.k, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(train_fold, bundle, plan, f, clf_cfg, train_cfg, verbose)
                   for f in range(plan.k)]
        return [f.result() for f in futures]


def cv_summary(results: Sequence[FoldResult], bundle: DatasetBundle) -> Dict[str, object]:
    """
    Mean and std of per-fold validation metrics plus the pooled validation report.

    Returns:
        {"mean": {...}, "std": {...}, "pooled": EvalReport over all validation sets}
    """
    reports = [r.report for r in results if r.report is not None]
    mean, std = {}, {}
    for name in SUMMARY_METRICS:
        values = [getattr(rep, name) for rep in reports]
        mean[name] = statistics.mean(values) if values else float("nan")
        std[name] = statistics.stdev(values) if len(values) >= 2 else 0.0
    index = np.concatenate([r.val_index for r in results])
    scores = np.concatenate([r.val_scores for r in results])
    pooled = evaluate(scores, positive_flags([bundle.samples[i] for i in index]))
    return {"mean": mean, "std": std, "pooled": pooled}
