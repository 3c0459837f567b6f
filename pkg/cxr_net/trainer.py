"""
Training loop

Runs mini-batch epochs over a ModelGraph for any TrainingTask (segmentation
or classification), records per-epoch history, aborts on non-finite losses
with epoch/batch diagnostics and keeps the weights of the best validation
epoch.

Features:
- Seed-defined sample order and augmentation streams (reruns are bit-identical)
- Optional validation-set augmentation, off by default for reported metrics
- Per-batch DEBUG logging when verbose
"""

import logging
import statistics
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datapipe.augment import AugmentConfig, augment, sample_rng
from .datapipe.samples import Sample
from .errors import NumericalError, ParameterError
from .nn.graph import ModelGraph
from .nn.layers import INFER, TRAIN
from .nn.optim import Adam, OptimizerConfig

logger = logging.getLogger(__name__)

# Philox stream tags keep data order, augmentation and validation draws independent
_ORDER_STREAM = 0
_AUGMENT_STREAM = 1
_VAL_AUGMENT_STREAM = 2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both training loops."""
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    shuffle: bool = True
    augment: bool = True
    augment_validation: bool = False
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ParameterError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")
        self.optimizer.validate()
        self.augmentation.validate()
        return self


@dataclass
class EpochRecord:
    """
    Losses and task metric for one epoch.

    Attributes:
        epoch: 1-based epoch number
        train_loss: Mean training loss over batches
        train_metric: Task metric on the training batches
        val_loss: Validation loss (NaN without a validation set)
        val_metric: Validation metric (NaN without a validation set)
    """
    epoch: int
    train_loss: float
    train_metric: float
    val_loss: float = float("nan")
    val_metric: float = float("nan")

    def __str__(self) -> str:
        return (f"epoch {self.epoch:4d} | loss {self.train_loss:.5f} / {self.val_loss:.5f} | "
                f"metric {self.train_metric:.4f} / {self.val_metric:.4f}")


@dataclass
class TrainHistory:
    """Epoch records plus the retained best weights."""
    metric_name: str
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_weights: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def best(self) -> Optional[EpochRecord]:
        return self.records[self.best_epoch - 1] if self.best_epoch else None

    def summary(self) -> Dict[str, float]:
        """Mean/std of the validation metric over epochs, with the best epoch."""
        values = [r.val_metric for r in self.records if not np.isnan(r.val_metric)]
        return {
            "epochs": len(self.records),
            "best_epoch": self.best_epoch,
            "mean_val_metric": statistics.mean(values) if values else float("nan"),
            "std_val_metric": statistics.stdev(values) if len(values) >= 2 else 0.0,
        }


class TrainingTask(ABC):
    """Maps samples to graph inputs and graph outputs to a loss and a metric."""

    metric_name = "metric"

    @abstractmethod
    def make_batch(self, samples: Sequence[Sample]) -> Tuple[Dict[str, np.ndarray], Any]:
        """(graph inputs, targets) for a list of (possibly augmented) samples."""

    @abstractmethod
    def loss(self, outputs: Dict[str, np.ndarray], targets: Any) -> Tuple[float, Dict[str, np.ndarray]]:
        """(loss value, backward seeds keyed by node name)."""

    @abstractmethod
    def metric(self, outputs: List[Dict[str, np.ndarray]], targets: List[Any]) -> float:
        """Epoch-level metric over every batch seen."""

    def augment(self, sample: Sample, rng: np.random.Generator, cfg: AugmentConfig) -> Sample:
        return augment(sample, rng, cfg)


class Trainer:
    """
    Mini-batch trainer.

    Provides one fit() entry point; the graph is left holding the best
    validation weights when it returns.
    """

    def __init__(self, graph: ModelGraph, task: TrainingTask, config: TrainConfig = TrainConfig(),
                 verbose: bool = False):
        """
        Initialize the trainer.

        Args:
            graph: Model to optimize in place
            task: Data/loss adapter
            config: Training hyperparameters
            verbose: Log every batch at DEBUG level
        """
        self.graph = graph
        self.task = task
        self.config = config.validate()
        self.verbose = verbose
        self.optimizer = Adam(config.optimizer)

    def _order(self, n: int, epoch: int) -> np.ndarray:
        if not self.config.shuffle:
            return np.arange(n)
        return sample_rng(self.config.seed, _ORDER_STREAM, epoch).permutation(n)

    def _prepared(self, samples: Sequence[Sample], indices: Sequence[int], epoch: int,
                  stream: int, augment: bool) -> List[Sample]:
        if not augment:
            return [samples[i] for i in indices]
        return [self.task.augment(samples[i], sample_rng(self.config.seed, stream, epoch, int(i)),
                                  self.config.augmentation) for i in indices]

    def _batches(self, n: int, order: np.ndarray):
        bs = self.config.batch_size
        for b, start in enumerate(range(0, n, bs)):
            yield b, order[start:start + bs]

    def _check_finite(self, loss: float, epoch: int, batch: int):
        if not np.isfinite(loss):
            raise NumericalError(f"{self.graph.name}: loss became {loss} at epoch {epoch}, batch {batch}")

    def run_epoch(self, samples: Sequence[Sample], epoch: int) -> Tuple[float, float]:
        """One optimization pass; returns (mean loss, metric)."""
        losses, outs, targets = [], [], []
        for b, idx in self._batches(len(samples), self._order(len(samples), epoch)):
            batch = self._prepared(samples, idx, epoch, _AUGMENT_STREAM, self.config.augment)
            inputs, target = self.task.make_batch(batch)
            out = self.graph.forward(inputs, TRAIN)
            loss, seeds = self.task.loss(out, target)
            self._check_finite(loss, epoch, b + 1)
            self.optimizer.step(self.graph, self.graph.backward(seeds))
            losses.append(loss)
            outs.append(out)
            targets.append(target)
            if self.verbose:
                logger.debug("%s epoch %d batch %d loss %.6f", self.graph.name, epoch, b + 1, loss)
        return float(np.mean(losses)), self.task.metric(outs, targets)

    def evaluate(self, samples: Sequence[Sample], epoch: int = 0) -> Tuple[float, float]:
        """Inference-mode loss and metric over ``samples`` in their given order."""
        losses, sizes, outs, targets = [], [], [], []
        for b, idx in self._batches(len(samples), np.arange(len(samples))):
            batch = self._prepared(samples, idx, epoch, _VAL_AUGMENT_STREAM,
                                   self.config.augment_validation)
            inputs, target = self.task.make_batch(batch)
            out = self.graph.forward(inputs, INFER)
            loss, _ = self.task.loss(out, target)
            self._check_finite(loss, epoch, b + 1)
            losses.append(loss)
            sizes.append(len(idx))
            outs.append(out)
            targets.append(target)
        return float(np.average(losses, weights=sizes)), self.task.metric(outs, targets)

    def fit(self, train: Sequence[Sample], val: Sequence[Sample] = ()) -> TrainHistory:
        """
        Train for ``config.epochs`` epochs.

        Args:
            train: Training samples
            val: Validation samples; best weights follow the lowest
                validation loss (training loss when empty)

        Returns:
            TrainHistory; the graph holds ``history.best_weights`` afterwards
        """
        history = TrainHistory(metric_name=self.task.metric_name,
                               best_weights=self.graph.get_weights())
        if self.config.epochs and not train:
            raise ParameterError("cannot train on an empty sample set")
        best_loss = float("inf")
        logger.info("Training %s: %d train / %d val samples, %d epochs",
                    self.graph.name, len(train), len(val), self.config.epochs)
        for epoch in range(1, self.config.epochs + 1):
            train_loss, train_metric = self.run_epoch(train, epoch)
            record = EpochRecord(epoch, train_loss, train_metric)
            if val:
                record.val_loss, record.val_metric = self.evaluate(val, epoch)
            history.records.append(record)
            logger.info("%s %s", self.graph.name, record)
            score = record.val_loss if val else record.train_loss
            if score < best_loss:
                best_loss = score
                history.best_epoch = epoch
                history.best_weights = self.graph.get_weights()
        self.graph.set_weights(history.best_weights)
        return history
