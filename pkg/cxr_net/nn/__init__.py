"""
Static-graph neural network engine.

Exports the layer vocabulary, the ModelGraph with reverse-mode gradients,
the Adam optimizer and CXWT weight I/O.
"""

from .graph import Gradients, ModelGraph, ParamCount, Parameter
from .layers import (
    INFER,
    TRAIN,
    Add,
    BatchNorm,
    ChannelSlice,
    Concat,
    GlobalAvgPoolMasked,
    LeakyReLU,
    MeanOverMembers,
    MultiHeadAttention,
    PointwiseConv2D,
    PointwiseMultiply,
    SeparableAtrousConv2D,
    Softmax,
    SpatialDropout,
    TransposeHW,
)
from .optim import Adam, OptimizerConfig
from .weights import decode_weights, encode_weights, load_weights, save_weights

__all__ = [
    "Gradients", "ModelGraph", "ParamCount", "Parameter",
    "INFER", "TRAIN",
    "Add", "BatchNorm", "ChannelSlice", "Concat", "GlobalAvgPoolMasked", "LeakyReLU",
    "MeanOverMembers", "MultiHeadAttention", "PointwiseConv2D", "PointwiseMultiply",
    "SeparableAtrousConv2D", "Softmax", "SpatialDropout", "TransposeHW",
    "Adam", "OptimizerConfig",
    "decode_weights", "encode_weights", "load_weights", "save_weights",
]
