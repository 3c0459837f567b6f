"""
Hybrid scattering + attention classifier and its ensemble

A fixed scattering front end feeds one or more trainable members. Each
member runs row and column cross attention (query: first scattering
channel, key: binary lung mask, value: decimated float mask), CONV RES
blocks down to a two-channel map, a pooling-include multiply, masked
global average pooling and a softmax over (Covid+, Covid-).
"""

import dataclasses
import json
import logging
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .blocks import conv_res_block
from .config import from_dict
from .datapipe.preprocess import (
    preprocess_for_classification,
    rescale_unit,
    resize_mask,
)
from .datapipe.samples import Sample, class_labels
from .errors import (
    FormatError,
    IntegrityError,
    ParameterError,
    PoolingError,
    ShapeError,
    TopologyError,
    ValidationError,
)
from .fileio import atomic_write
from .losses import weighted_cross_entropy_and_grad
from .ndtensor import downsample2d
from .nn.graph import ModelGraph
from .nn.layers import (
    INFER,
    BatchNorm,
    ChannelSlice,
    Concat,
    GlobalAvgPoolMasked,
    MeanOverMembers,
    MultiHeadAttention,
    PointwiseConv2D,
    PointwiseMultiply,
    Softmax,
    SpatialDropout,
    TransposeHW,
)
from .nn.weights import decode_weights, encode_weights
from .trainer import TrainConfig, Trainer, TrainHistory, TrainingTask
from .wst import ScatterConfig, channel_count, wst_block

logger = logging.getLogger(__name__)

MASK_ONLY = "mask_only"
MASK_AND_THRESHOLD = "mask_and_threshold"
IMAGE_WEIGHTED = "image_weighted"
POOL_MODES = (MASK_ONLY, MASK_AND_THRESHOLD, IMAGE_WEIGHTED)

FEATURE_MEAN = "feature_mean"
PROB_MEAN = "prob_mean"
FUSIONS = (FEATURE_MEAN, PROB_MEAN)

N_CLASSES = 2


@dataclass(frozen=True)
class ClfConfig:
    """Architecture of one classifier member plus pooling and fusion modes."""
    scatter: ScatterConfig = field(default_factory=ScatterConfig)
    n_blocks: int = 3
    kernel: int = 3
    dilations: Tuple[int, ...] = (1, 2, 3)
    branch_filters: int = 17
    shortcut_filters: int = 51
    heads: int = 2
    head_size: int = 64
    pool_mode: str = MASK_ONLY
    tau: float = 0.5
    dropout: float = 0.1
    branch_depth: int = 1
    fusion: str = FEATURE_MEAN

    def validate(self) -> "ClfConfig":
        self.scatter.validate()
        if self.n_blocks < 1 or self.branch_depth < 1 or not self.dilations:
            raise ParameterError("n_blocks, branch_depth and dilations must be non-empty/positive")
        if self.shortcut_filters != len(self.dilations) * self.branch_filters:
            raise ParameterError(
                f"shortcut filters {self.shortcut_filters} must equal "
                f"{len(self.dilations)} branches x {self.branch_filters} filters"
            )
        if self.pool_mode not in POOL_MODES:
            raise ParameterError(f"pool_mode must be one of {POOL_MODES}, got {self.pool_mode!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ParameterError(f"tau {self.tau} outside [0, 1]")
        if self.fusion not in FUSIONS:
            raise ParameterError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout rate {self.dropout} outside [0, 1)")
        return self

    @property
    def feature_channels(self) -> int:
        """Scattering channels plus the appended float-mask channel."""
        return channel_count(self.scatter.J, self.scatter.L) + 1


# Inputs

def pooling_include(binary_mask, image_ds, mode: str = MASK_ONLY, tau: float = 0.5) -> np.ndarray:
    """
    Pooling include map at the decimated resolution.

    Args:
        binary_mask: Decimated binary lung mask [h, w]
        image_ds: Decimated standardized image rescaled to [0, 1], [h, w]
        mode: mask_only, mask_and_threshold or image_weighted
        tau: Threshold of mask_and_threshold

    Returns:
        [h, w] map; binary for the first two modes, graded weights otherwise

    Raises:
        PoolingError: If nothing is included
    """
    binary = np.asarray(binary_mask, dtype=np.float64)
    image_ds = np.asarray(image_ds, dtype=np.float64)
    if binary.shape != image_ds.shape:
        raise ShapeError(f"mask {binary.shape} and image {image_ds.shape} differ")
    if mode == MASK_ONLY:
        include = binary
    elif mode == MASK_AND_THRESHOLD:
        include = binary * (image_ds >= tau)
    elif mode == IMAGE_WEIGHTED:
        include = binary * image_ds
    else:
        raise ParameterError(f"unknown pooling mode {mode!r}")
    if not np.any(include > 0):
        raise PoolingError()
    return include


def classification_input(sample: Sample, mean: float, std: float) -> np.ndarray:
    """Equalized, standardized image of a sample that carries a lung mask."""
    if sample.float_mask is None:
        raise ValidationError(f"sample {sample.id}: the classifier needs a lung mask")
    return preprocess_for_classification(sample.image, mean, std, sample.shape)


def member_inputs(image_std, float_mask, cfg: ClfConfig) -> Dict[str, np.ndarray]:
    """Scattering features, binary mask and pooling map (no batch axis) for one image."""
    image_std = np.asarray(image_std, dtype=np.float64)
    scatter_cfg = cfg.scatter.with_shape(*image_std.shape)
    features, binary = wst_block(image_std, float_mask, scatter_cfg)
    image_ds = rescale_unit(downsample2d(image_std, scatter_cfg.factor))
    include = pooling_include(binary[..., 0], image_ds, cfg.pool_mode, cfg.tau)
    return {"features": features, "binary_mask": binary, "pool_map": include[..., None]}


def stack_inputs(items: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    return {key: np.stack([item[key] for item in items]) for key in items[0]}


# Graphs

def attention_block(graph: ModelGraph, cfg: ClfConfig, prefix: str = "",
                    features: str = "features", binary_mask: str = "binary_mask") -> str:
    """
    Append the row/column cross-attention block; returns the [h, w, C + 2] node.

    The attention channel is Q * A_rows * A_cols, where A_cols is row
    attention over the transposed maps transposed back.
    """
    c = cfg.feature_channels
    p = f"{prefix}attention/"
    q = graph.add(p + "query", ChannelSlice(0, 1), features)
    v = graph.add(p + "value", ChannelSlice(c - 1, c), features)
    rows = graph.add(p + "rows", MultiHeadAttention(cfg.heads, cfg.head_size), q, binary_mask, v)
    q_t = graph.add(p + "query_t", TransposeHW(), q)
    k_t = graph.add(p + "key_t", TransposeHW(), binary_mask)
    v_t = graph.add(p + "value_t", TransposeHW(), v)
    cols_t = graph.add(p + "cols_t", MultiHeadAttention(cfg.heads, cfg.head_size), q_t, k_t, v_t)
    cols = graph.add(p + "cols", TransposeHW(), cols_t)
    product = graph.add(p + "product", PointwiseMultiply(), q, rows, cols)
    return graph.add(p + "out", Concat(), features, product)


def _add_member(graph: ModelGraph, cfg: ClfConfig, prefix: str) -> str:
    """Member body from shared inputs to its pool-masked two-channel map."""
    x = attention_block(graph, cfg, prefix)
    channels = cfg.feature_channels + 1
    x = graph.add(f"{prefix}att_dropout", SpatialDropout(cfg.dropout), x)
    x = graph.add(f"{prefix}att_norm", BatchNorm(channels), x)
    kernels = (cfg.kernel,) * len(cfg.dilations)
    for b in range(cfg.n_blocks):
        x = conv_res_block(graph, f"{prefix}block{b + 1}", x, channels, kernels, cfg.dilations,
                           cfg.branch_filters, cfg.shortcut_filters, cfg.branch_depth, cfg.dropout)
        channels = cfg.shortcut_filters
    x = graph.add(f"{prefix}block{cfg.n_blocks}/projection", PointwiseConv2D(channels, N_CLASSES), x)
    return graph.add(f"{prefix}final_map", PointwiseMultiply(), x, "pool_map")


def _declare_inputs(graph: ModelGraph, cfg: ClfConfig):
    graph.input("features", cfg.feature_channels)
    graph.input("binary_mask", 1)
    graph.input("pool_map", 1)


def build_member(cfg: ClfConfig = ClfConfig(), seed: int = 0, name: str = "member") -> ModelGraph:
    """Single member: inputs features / binary_mask / pool_map, outputs ``probs`` [N, 2]."""
    cfg.validate()
    graph = ModelGraph(name, seed)
    _declare_inputs(graph, cfg)
    final = _add_member(graph, cfg, "")
    graph.add("logits", GlobalAvgPoolMasked(), final, "pool_map")
    graph.add("probs", Softmax(), "logits")
    graph.set_outputs("probs")
    return graph


@dataclass
class ClassifierModel:
    """
    A trained graph with everything inference needs.

    Attributes:
        graph: Member or ensemble graph
        config: Architecture and pooling settings
        mean: Training-set mean of equalized images
        std: Training-set std of equalized images
        final_nodes: Masked final feature maps used for Grad-CAM
        score_node: Class-score node Grad-CAM differentiates
        input_shape: Working (H, W) images are resized to; None keeps each image's own size
    """
    graph: ModelGraph
    config: ClfConfig
    mean: float = 0.0
    std: float = 1.0
    final_nodes: Tuple[str, ...] = ("final_map",)
    score_node: str = "logits"
    input_shape: Optional[Tuple[int, int]] = None

    def working_shape(self, image) -> Tuple[int, int]:
        if self.input_shape is not None:
            return tuple(self.input_shape)
        return tuple(np.shape(image)[:2])

    def prepare(self, image, float_mask) -> Tuple[np.ndarray, np.ndarray]:
        """Resized, equalized, standardized image and its resized float mask."""
        if float_mask is None:
            raise ValidationError("the classifier needs a lung mask for every image")
        shape = self.working_shape(image)
        return (preprocess_for_classification(image, self.mean, self.std, shape),
                resize_mask(float_mask, shape))

    def inputs_for(self, images, masks) -> Dict[str, np.ndarray]:
        """Batch inputs from raw [0, 1] images and float masks of one working shape."""
        items = [member_inputs(*self.prepare(im, m), self.config) for im, m in zip(images, masks)]
        if not items:
            raise ShapeError("no images to classify")
        shapes = {item["features"].shape for item in items}
        if len(shapes) > 1:
            raise ShapeError(f"one batch holds several working shapes: {sorted(shapes)}")
        return stack_inputs(items)

    def predict_proba(self, images, masks, batch_size: int = 16) -> np.ndarray:
        """[N, 2] probabilities (Covid+, Covid-); differently sized images are batched apart."""
        by_shape: Dict[Tuple[int, int], List[int]] = {}
        for i, image in enumerate(images):
            by_shape.setdefault(self.working_shape(image), []).append(i)
        out = np.zeros((len(images), N_CLASSES))
        for indices in by_shape.values():
            for start in range(0, len(indices), batch_size):
                chunk = indices[start:start + batch_size]
                inputs = self.inputs_for([images[i] for i in chunk], [masks[i] for i in chunk])
                out[chunk] = self.graph.forward(inputs, INFER)["probs"]
        return out


@dataclass
class EnsembleModel(ClassifierModel):
    """Members sharing one scattering front end, fused by feature or probability mean."""
    n_members: int = 1
    fusion: str = FEATURE_MEAN

    @property
    def member_param_count(self) -> int:
        return self.graph.count_params().total // self.n_members


def _check_topology(members: Sequence[ModelGraph]):
    if not members:
        raise TopologyError("an ensemble needs at least one member")
    reference = members[0].signature()
    for i, m in enumerate(members[1:], start=2):
        if m.signature() != reference:
            raise TopologyError(f"member {i} differs in topology from member 1")


def build_ensemble_graph(cfg: ClfConfig, n_members: int, fusion: str = FEATURE_MEAN,
                         seed: int = 0) -> Tuple[ModelGraph, Tuple[str, ...], str]:
    """(graph, final-map nodes for Grad-CAM, score node) of an n-member ensemble."""
    cfg.validate()
    if n_members < 1:
        raise TopologyError("an ensemble needs at least one member")
    graph = ModelGraph("ensemble", seed)
    _declare_inputs(graph, cfg)
    finals = [_add_member(graph, cfg, f"m{i}/") for i in range(n_members)]
    if fusion == FEATURE_MEAN:
        graph.add("final_map", MeanOverMembers(), *finals)
        graph.add("logits", GlobalAvgPoolMasked(), "final_map", "pool_map")
        graph.add("probs", Softmax(), "logits")
        final_nodes, score = ("final_map",), "logits"
    elif fusion == PROB_MEAN:
        member_probs = []
        for i, final in enumerate(finals):
            graph.add(f"m{i}/logits", GlobalAvgPoolMasked(), final, "pool_map")
            member_probs.append(graph.add(f"m{i}/probs", Softmax(), f"m{i}/logits"))
        graph.add("probs", MeanOverMembers(), *member_probs)
        final_nodes, score = tuple(finals), "probs"
    else:
        raise ParameterError(f"unknown fusion {fusion!r}")
    graph.set_outputs("probs")
    return graph, final_nodes, score


def build_ensemble(members: Sequence[ModelGraph], cfg: ClfConfig = ClfConfig(),
                   mean: float = 0.0, std: float = 1.0, fusion: Optional[str] = None,
                   input_shape: Optional[Tuple[int, int]] = None) -> EnsembleModel:
    """
    Combine trained members into one graph without averaging their weights.

    Raises:
        TopologyError: If members differ in topology or none are given
    """
    _check_topology(members)
    fusion = fusion or cfg.fusion
    graph, final_nodes, score = build_ensemble_graph(cfg, len(members), fusion)
    graph.set_weights({f"m{i}/{name}": value
                       for i, m in enumerate(members) for name, value in m.get_weights().items()})
    return EnsembleModel(graph=graph, config=cfg, mean=mean, std=std, final_nodes=final_nodes,
                         score_node=score, n_members=len(members), fusion=fusion,
                         input_shape=tuple(input_shape) if input_shape else None)


def ensemble_forward(em: ClassifierModel, image, float_mask) -> Tuple[float, float]:
    """(p_covid, p_noncovid) for one raw image and its float lung mask."""
    probs = em.predict_proba([np.asarray(image, dtype=np.float64)],
                             [np.asarray(float_mask, dtype=np.float64)])[0]
    return float(probs[0]), float(probs[1])


# Training

class ClassificationTask(TrainingTask):
    """Class-weighted cross entropy on member probabilities; accuracy as metric."""

    metric_name = "accuracy"

    def __init__(self, cfg: ClfConfig, mean: float, std: float, class_weights: Sequence[float]):
        self.cfg = cfg
        self.mean = mean
        self.std = std
        self.class_weights = np.asarray(class_weights, dtype=np.float64)
        self.clamps = Counter()
        self._cache: Dict[str, Tuple[Sample, Dict[str, np.ndarray]]] = {}

    def _inputs(self, sample: Sample) -> Dict[str, np.ndarray]:
        cached = self._cache.get(sample.id)
        if cached is not None and cached[0] is sample:
            return cached[1]
        inputs = member_inputs(classification_input(sample, self.mean, self.std),
                               sample.float_mask, self.cfg)
        self._cache[sample.id] = (sample, inputs)
        return inputs

    def make_batch(self, samples):
        return stack_inputs([self._inputs(s) for s in samples]), class_labels(samples)

    def loss(self, outputs, targets):
        value, grad = weighted_cross_entropy_and_grad(outputs["probs"], targets,
                                                      self.class_weights, self.clamps)
        return value, {"probs": grad}

    def metric(self, outputs, targets):
        predicted = np.concatenate([np.argmax(o["probs"], axis=1) for o in outputs])
        return float(np.mean(predicted == np.concatenate(targets)))


def train_clf(member: ModelGraph, train: Sequence[Sample], val: Sequence[Sample] = (),
              train_cfg: TrainConfig = TrainConfig(), clf_cfg: ClfConfig = ClfConfig(),
              mean: float = 0.0, std: float = 1.0, class_weights: Sequence[float] = (1.0, 1.0),
              verbose: bool = False) -> TrainHistory:
    """Train one member in place; it keeps its best-validation weights."""
    task = ClassificationTask(clf_cfg, mean, std, class_weights)
    history = Trainer(member, task, train_cfg, verbose).fit(train, val)
    if task.clamps["clamped"]:
        logger.warning("%s: %d probabilities clamped during training", member.name,
                       task.clamps["clamped"])
    return history


# Ensemble container: b"CXEN" | u32 version | u32 header length | JSON header | u32 CRC-32
# then per member: u64 length | CXWT blob | u32 CRC-32

ENSEMBLE_MAGIC = b"CXEN"
ENSEMBLE_VERSION = 1


def encode_ensemble(cfg: ClfConfig, member_weights: Sequence[Dict[str, np.ndarray]],
                    mean: float, std: float, input_shape: Optional[Tuple[int, int]] = None) -> bytes:
    header = json.dumps({"config": dataclasses.asdict(cfg), "members": len(member_weights),
                         "mean": mean, "std": std,
                         "input_shape": list(input_shape) if input_shape else None},
                        sort_keys=True).encode("utf-8")
    parts = [ENSEMBLE_MAGIC, struct.pack("<II", ENSEMBLE_VERSION, len(header)), header,
             struct.pack("<I", zlib.crc32(header))]
    for weights in member_weights:
        blob = encode_weights(weights)
        parts += [struct.pack("<Q", len(blob)), blob, struct.pack("<I", zlib.crc32(blob))]
    return b"".join(parts)


def decode_ensemble(data: bytes) -> Tuple[ClfConfig, List[Dict[str, np.ndarray]], float, float,
                                          Optional[Tuple[int, int]]]:
    """(config, member weights, mean, std, input shape) from a CXEN blob."""
    def take(pos: int, n: int) -> bytes:
        if pos + n > len(data):
            raise FormatError(f"truncated: need {n} bytes, {len(data) - pos} left", offset=pos)
        return data[pos:pos + n]

    if take(0, 4) != ENSEMBLE_MAGIC:
        raise FormatError("not a CXEN ensemble file", offset=0)
    version, header_len = struct.unpack("<II", take(4, 8))
    if version != ENSEMBLE_VERSION:
        raise FormatError(f"unsupported ensemble version {version}", offset=4)
    header_bytes = take(12, header_len)
    pos = 12 + header_len
    if struct.unpack("<I", take(pos, 4))[0] != zlib.crc32(header_bytes):
        raise IntegrityError("checksum mismatch in ensemble header", offset=pos)
    pos += 4
    header = json.loads(header_bytes.decode("utf-8"))
    members = []
    for i in range(header["members"]):
        (length,) = struct.unpack("<Q", take(pos, 8))
        blob = take(pos + 8, length)
        pos += 8 + length
        if struct.unpack("<I", take(pos, 4))[0] != zlib.crc32(blob):
            raise IntegrityError(f"checksum mismatch in member {i + 1}", offset=pos)
        pos += 4
        members.append(decode_weights(blob))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    shape = header.get("input_shape")
    return (from_dict(ClfConfig, header["config"]), members, header["mean"], header["std"],
            tuple(shape) if shape else None)


def save_ensemble(path, em: EnsembleModel):
    """Write the ensemble's members as separate CXWT blobs plus its config header."""
    weights = em.graph.get_weights()
    per_member = [
        {name[len(f"m{i}/"):]: value for name, value in weights.items() if name.startswith(f"m{i}/")}
        for i in range(em.n_members)
    ]
    atomic_write(path, encode_ensemble(dataclasses.replace(em.config, fusion=em.fusion),
                                       per_member, em.mean, em.std, em.input_shape))


def load_ensemble(path, fusion: Optional[str] = None) -> EnsembleModel:
    with open(path, "rb") as f:
        data = f.read()
    try:
        cfg, member_weights, mean, std, input_shape = decode_ensemble(data)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc.detail}", offset=exc.offset) from exc
    members = []
    for i, weights in enumerate(member_weights):
        member = build_member(cfg, name=f"member{i + 1}")
        member.set_weights(weights)
        members.append(member)
    return build_ensemble(members, cfg, mean, std, fusion, input_shape)
