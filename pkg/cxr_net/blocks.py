"""Residual building blocks shared by the segmentation and classification graphs."""

from typing import Sequence

from .nn.graph import ModelGraph
from .nn.layers import (
    Add,
    BatchNorm,
    Concat,
    LeakyReLU,
    PointwiseConv2D,
    SeparableAtrousConv2D,
    SpatialDropout,
)


def conv_res_block(
    graph: ModelGraph,
    prefix: str,
    x: str,
    in_channels: int,
    kernels: Sequence[int],
    dilations: Sequence[int],
    filters: int,
    shortcut_filters: int,
    depth: int = 1,
    dropout: float = 0.1,
) -> str:
    """
    Append one CONV RES block and return its output node.

    Parallel branches of ``depth`` stacked separable atrous convolutions
    (leaky-ReLU between them) are concatenated, added to a 1x1 shortcut
    projection, then passed through leaky-ReLU, spatial dropout and batch
    norm. Spatial size is preserved.
    """
    branches = []
    for i, (kernel, dilation) in enumerate(zip(kernels, dilations)):
        y, channels = x, in_channels
        for level in range(depth):
            if level:
                y = graph.add(f"{prefix}/branch{i}/act{level}", LeakyReLU(), y)
            y = graph.add(f"{prefix}/branch{i}/conv{level}",
                          SeparableAtrousConv2D(channels, filters, kernel, dilation), y)
            channels = filters
        branches.append(y)
    merged = graph.add(f"{prefix}/concat", Concat(), *branches)
    shortcut = graph.add(f"{prefix}/shortcut", PointwiseConv2D(in_channels, shortcut_filters), x)
    y = graph.add(f"{prefix}/add", Add(), merged, shortcut)
    y = graph.add(f"{prefix}/act", LeakyReLU(), y)
    y = graph.add(f"{prefix}/dropout", SpatialDropout(dropout), y)
    return graph.add(f"{prefix}/norm", BatchNorm(shortcut_filters), y)
