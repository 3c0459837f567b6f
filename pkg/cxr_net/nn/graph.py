"""
Static computation graph with reverse-mode gradients.

Nodes are added in topological order, each naming its input nodes. Channel
counts are checked when a node is added; spatial extents are free (any
H x W) but every spatial node must keep the extent of its inputs, swapped
only by an axis-transposing layer.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import NumericalError, ParameterError, ShapeError
from .layers import INFER, TRAIN, ForwardContext, Layer, ParamSpec

logger = logging.getLogger(__name__)


@dataclass
class Parameter:
    """A named tensor in the parameter store."""
    value: np.ndarray
    trainable: bool = True


@dataclass
class Node:
    name: str
    layer: Optional[Layer]
    inputs: Tuple[str, ...]
    channels: int

    @property
    def is_input(self) -> bool:
        return self.layer is None


@dataclass
class Gradients:
    """Parameter gradients keyed by parameter name, plus node gradients."""
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    nodes: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ParamCount:
    """Trainable scalars per layer node, with totals."""
    per_layer: Dict[str, int]
    total: int
    non_trainable: int

    def group_by_prefix(self, depth: int = 1) -> Dict[str, int]:
        """Sum counts over the first ``depth`` path components of node names."""
        groups: Dict[str, int] = {}
        for name, count in self.per_layer.items():
            key = "/".join(name.split("/")[:depth])
            groups[key] = groups.get(key, 0) + count
        return groups


def _initial_value(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    if spec.init == "glorot":
        limit = np.sqrt(6.0 / (spec.fan_in + spec.fan_out))
        return rng.uniform(-limit, limit, size=spec.shape)
    raise ParameterError(f"Unknown initializer {spec.init!r}")


class ModelGraph:
    """
    Layers wired as a DAG over a named parameter store.

    Attributes:
        name: Graph name, used in log messages
        params: Parameter store; names are ``<node>/<parameter>``
        nodes: Nodes in insertion (topological) order
        outputs: Names of the nodes returned by :meth:`forward`
    """

    def __init__(self, name: str = "model", seed: int = 0):
        self.name = name
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: Dict[str, Parameter] = {}
        self.nodes: Dict[str, Node] = {}
        self.outputs: List[str] = []
        self._values: Dict[str, np.ndarray] = {}
        self._caches: Dict[str, object] = {}

    # Building

    def input(self, name: str, channels: int) -> str:
        """Declare an input node carrying ``channels`` channels."""
        self._check_new(name)
        self.nodes[name] = Node(name, None, (), channels)
        return name

    def add(self, name: str, layer: Layer, *inputs: str) -> str:
        """Append ``layer`` as node ``name`` fed by ``inputs``; returns ``name``."""
        self._check_new(name)
        missing = [i for i in inputs if i not in self.nodes]
        if missing:
            raise ShapeError(f"node {name!r} reads undefined node(s) {missing}")
        channels = layer.out_channels([self.nodes[i].channels for i in inputs])
        for pname, spec in layer.param_specs().items():
            self.params[f"{name}/{pname}"] = Parameter(
                _initial_value(spec, self.rng), spec.trainable
            )
        self.nodes[name] = Node(name, layer, tuple(inputs), channels)
        return name

    def set_outputs(self, *names: str):
        for n in names:
            if n not in self.nodes:
                raise ShapeError(f"unknown output node {n!r}")
        self.outputs = list(names)

    def _check_new(self, name: str):
        if name in self.nodes:
            raise ShapeError(f"duplicate node name {name!r}")

    @property
    def input_names(self) -> List[str]:
        return [n.name for n in self.nodes.values() if n.is_input]

    def layer_params(self, node_name: str) -> Dict[str, np.ndarray]:
        """Parameters of one node keyed by their local names."""
        prefix = node_name + "/"
        return {
            k[len(prefix):]: p.value for k, p in self.params.items() if k.startswith(prefix)
        }

    # Evaluation

    def forward(self, inputs: Mapping[str, np.ndarray], mode: str = INFER) -> Dict[str, np.ndarray]:
        """
        Evaluate every node and return the output nodes' values.

        Args:
            inputs: Arrays for every input node, batch axis first
            mode: "train" (batch statistics, dropout active) or "infer"

        Raises:
            ShapeError: On missing inputs, channel mismatches, or any spatial
                node whose H x W differs from the inputs'
        """
        if mode not in (TRAIN, INFER):
            raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
        ctx = ForwardContext(mode, self.rng)
        values: Dict[str, np.ndarray] = {}
        caches: Dict[str, object] = {}
        spatial: Optional[Tuple[int, int]] = None
        frames: Dict[str, Tuple[int, int]] = {}

        for node in self.nodes.values():
            if node.is_input:
                if node.name not in inputs:
                    raise ShapeError(f"missing input {node.name!r}")
                value = np.asarray(inputs[node.name], dtype=np.float64)
                if value.shape[-1] != node.channels:
                    raise ShapeError(
                        f"input {node.name!r} has {value.shape[-1]} channels, "
                        f"expected {node.channels}"
                    )
            else:
                xs = [values[i] for i in node.inputs]
                value, caches[node.name] = node.layer.forward(
                    self.layer_params(node.name), xs, ctx
                )
            if value.ndim == 4:
                hw = tuple(value.shape[1:3])
                if spatial is None:
                    spatial = hw
                expected = self._expected_frame(node, frames, spatial)
                if hw != expected:
                    raise ShapeError(f"node {node.name!r} changed spatial size {expected} -> {hw}")
                frames[node.name] = hw
            values[node.name] = value

        self._values, self._caches = values, caches
        return {name: values[name] for name in self.outputs}

    @staticmethod
    def _expected_frame(node: Node, frames: Dict[str, Tuple[int, int]],
                        spatial: Tuple[int, int]) -> Tuple[int, int]:
        """Extent a spatial node must keep: its first spatial parent's, swapped by a transpose."""
        parents = [frames[i] for i in node.inputs if i in frames]
        if node.is_input or not parents:
            return spatial
        return parents[0][::-1] if node.layer.swaps_axes else parents[0]

    def value(self, node_name: str) -> np.ndarray:
        """Value of any node from the most recent forward pass."""
        return self._values[node_name]

    def backward(self, seeds: Mapping[str, np.ndarray]) -> Gradients:
        """
        Reverse-mode pass from gradients seeded at one or more nodes.

        Args:
            seeds: d(loss)/d(node) for the nodes the loss depends on

        Returns:
            Gradients for every trainable parameter (zeros if unreached) and
            for every node the seeds reach
        """
        if not self._values:
            raise ShapeError("backward called before forward")
        node_grads: Dict[str, np.ndarray] = {}
        for name, g in seeds.items():
            if name not in self._values:
                raise ShapeError(f"cannot seed unknown node {name!r}")
            node_grads[name] = np.asarray(g, dtype=np.float64).copy()

        param_grads = {
            k: np.zeros_like(p.value) for k, p in self.params.items() if p.trainable
        }
        for node in reversed(list(self.nodes.values())):
            if node.is_input or node.name not in node_grads:
                continue
            local = {
                k[len(node.name) + 1:]: g for k, g in param_grads.items()
                if k.startswith(node.name + "/")
            }
            for k, v in self.layer_params(node.name).items():
                local.setdefault(k, np.zeros_like(v))
            dxs = node.layer.backward(
                self.layer_params(node.name), self._caches[node.name], node_grads[node.name], local
            )
            for src, dx in zip(node.inputs, dxs):
                if dx is None:
                    continue
                if src in node_grads:
                    node_grads[src] = node_grads[src] + dx
                else:
                    node_grads[src] = dx

        for k, g in param_grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"{self.name}: gradient of {k} is not finite")
        return Gradients(param_grads, node_grads)

    # Parameters

    def count_params(self) -> ParamCount:
        """Exact trainable scalar counts grouped by layer node."""
        per_layer: Dict[str, int] = {}
        non_trainable = 0
        for key, p in self.params.items():
            node = key.rsplit("/", 1)[0]
            if p.trainable:
                per_layer[node] = per_layer.get(node, 0) + p.value.size
            else:
                non_trainable += p.value.size
        return ParamCount(per_layer, sum(per_layer.values()), non_trainable)

    def get_weights(self) -> Dict[str, np.ndarray]:
        """Copies of every stored tensor, trainable or not."""
        return {k: p.value.copy() for k, p in self.params.items()}

    def set_weights(self, weights: Mapping[str, np.ndarray]):
        """Overwrite stored tensors in place; names and shapes must match exactly."""
        missing = sorted(set(self.params) - set(weights))
        extra = sorted(set(weights) - set(self.params))
        if missing or extra:
            raise ShapeError(f"weight names differ: missing {missing}, unexpected {extra}")
        for k, w in weights.items():
            target = self.params[k].value
            if target.shape != np.shape(w):
                raise ShapeError(f"weight {k!r} has shape {np.shape(w)}, expected {target.shape}")
            target[...] = w

    def signature(self) -> List[Tuple[str, str, Tuple[str, ...], dict]]:
        """Topology description used to compare graphs."""
        return [
            (n.name, n.layer.kind if n.layer else "input", n.inputs,
             n.layer.config() if n.layer else {"channels": n.channels})
            for n in self.nodes.values()
        ]
