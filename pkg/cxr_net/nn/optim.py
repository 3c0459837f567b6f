"""Gradient-descent optimizers over a ModelGraph parameter store."""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..errors import ParameterError
from .graph import Gradients, ModelGraph


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer hyperparameters; ``name`` is "adam" or "sgd"."""
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def validate(self):
        if self.name not in ("adam", "sgd"):
            raise ParameterError(f"Unknown optimizer {self.name!r}")
        if self.lr < 0:
            raise ParameterError(f"Learning rate must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ParameterError("Adam betas must lie in [0, 1)")
        return self


class Adam:
    """
    Adam with bias correction; ``name="sgd"`` degrades it to plain SGD.

    The moment estimates are keyed by parameter name, so one optimizer
    instance belongs to one graph.
    """

    def __init__(self, config: OptimizerConfig = None):
        self.config = (config or OptimizerConfig()).validate()
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, graph: ModelGraph, grads: Gradients):
        """Update every trainable parameter of ``graph`` in place."""
        cfg = self.config
        self.t += 1
        for name in sorted(grads.params):
            param = graph.params[name]
            if not param.trainable:
                continue
            g = grads.params[name]
            if cfg.name == "sgd":
                param.value -= cfg.lr * g
                continue
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** self.t)
            v_hat = v / (1.0 - cfg.beta2 ** self.t)
            param.value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
