"""
Layer vocabulary for the static-graph engine.

Every layer works on batched float64 arrays: spatial tensors are
[N, H, W, C] (channels last) and pooled vectors are [N, C]. A layer declares
its parameters, infers its output channel count at build time, and supplies
an analytic ``backward`` that maps the output gradient to input gradients
while accumulating parameter gradients into a dict.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ParameterError, PoolingError, ShapeError

TRAIN = "train"
INFER = "infer"


@dataclass(frozen=True)
class ParamSpec:
    """Shape and initializer of one layer parameter."""
    shape: Tuple[int, ...]
    init: str = "zeros"
    trainable: bool = True
    fan_in: int = 1
    fan_out: int = 1


@dataclass
class ForwardContext:
    """Per-call state handed to every layer."""
    mode: str
    rng: np.random.Generator


class Layer:
    """Base class; subclasses set ``kind`` and override the hooks they need."""

    kind = "layer"
    arity: Optional[int] = 1
    # output H x W is the input W x H
    swaps_axes = False

    def param_specs(self) -> Dict[str, ParamSpec]:
        return {}

    def out_channels(self, in_channels: Sequence[int]) -> int:
        self._check_arity(in_channels)
        return in_channels[0]

    def forward(self, p, xs, ctx):
        raise NotImplementedError

    def backward(self, p, cache, dy, grads) -> List[Optional[np.ndarray]]:
        raise NotImplementedError

    def config(self) -> dict:
        return {k: v for k, v in vars(self).items() if not k.startswith("_")}

    def _check_arity(self, in_channels: Sequence[int]):
        if self.arity is not None and len(in_channels) != self.arity:
            raise ShapeError(f"{self.kind} takes {self.arity} input(s), got {len(in_channels)}")

    def _check_in(self, in_channels: Sequence[int], expected: int):
        self._check_arity(in_channels)
        if in_channels[0] != expected:
            raise ShapeError(f"{self.kind} expects {expected} input channels, got {in_channels[0]}")


def reflect_index(n: int, pad: int) -> np.ndarray:
    """Source index of every sample of an axis reflect-padded by ``pad`` (edge not repeated)."""
    if n == 1:
        return np.zeros(1 + 2 * pad, dtype=np.intp)
    return np.pad(np.arange(n), pad, mode="reflect")


def _fold_reflect(dxp: np.ndarray, idx_h: np.ndarray, idx_w: np.ndarray,
                  H: int, W: int) -> np.ndarray:
    """Adjoint of reflect padding: route padded-grid gradients back to their sources."""
    N, _, Wp, C = dxp.shape
    rows = np.zeros((N, H, Wp, C))
    np.add.at(rows, (slice(None), idx_h), dxp)
    dx = np.zeros((N, H, W, C))
    np.add.at(dx, (slice(None), slice(None), idx_w), rows)
    return dx


class SeparableAtrousConv2D(Layer):
    """Dilated depthwise convolution, 1x1 channel mixing, then bias; reflect borders."""

    kind = "separable_atrous_conv2d"

    def __init__(self, in_channels: int, filters: int, kernel: int, dilation: int = 1):
        if kernel < 1 or kernel % 2 == 0:
            raise ParameterError(f"kernel size must be odd, got {kernel}")
        if dilation < 1:
            raise ParameterError(f"dilation must be >= 1, got {dilation}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.dilation = dilation

    def param_specs(self):
        k, c, f = self.kernel, self.in_channels, self.filters
        return {
            "depthwise": ParamSpec((k, k, c), "glorot", fan_in=k * k, fan_out=k * k),
            "pointwise": ParamSpec((c, f), "glorot", fan_in=c, fan_out=f),
            "bias": ParamSpec((f,), "zeros"),
        }

    def out_channels(self, in_channels):
        self._check_in(in_channels, self.in_channels)
        return self.filters

    def _taps(self):
        d = self.dilation
        return [(a, b, a * d, b * d) for a in range(self.kernel) for b in range(self.kernel)]

    def forward(self, p, xs, ctx):
        x = xs[0]
        N, H, W, C = x.shape
        pad = self.dilation * (self.kernel // 2)
        idx_h, idx_w = reflect_index(H, pad), reflect_index(W, pad)
        xp = x[:, idx_h][:, :, idx_w]
        dw = p["depthwise"]
        mid = np.zeros_like(x)
        for a, b, oa, ob in self._taps():
            mid += xp[:, oa:oa + H, ob:ob + W, :] * dw[a, b]
        y = mid @ p["pointwise"] + p["bias"]
        return y, (xp, mid, idx_h, idx_w, H, W)

    def backward(self, p, cache, dy, grads):
        xp, mid, idx_h, idx_w, H, W = cache
        grads["pointwise"] += np.einsum("nhwc,nhwf->cf", mid, dy)
        grads["bias"] += dy.sum(axis=(0, 1, 2))
        dmid = dy @ p["pointwise"].T
        dw = p["depthwise"]
        dxp = np.zeros_like(xp)
        for a, b, oa, ob in self._taps():
            window = xp[:, oa:oa + H, ob:ob + W, :]
            grads["depthwise"][a, b] += np.einsum("nhwc,nhwc->c", window, dmid)
            dxp[:, oa:oa + H, ob:ob + W, :] += dmid * dw[a, b]
        return [_fold_reflect(dxp, idx_h, idx_w, H, W)]


class PointwiseConv2D(Layer):
    """1x1 convolution with bias."""

    kind = "pointwise_conv2d"

    def __init__(self, in_channels: int, filters: int):
        self.in_channels = in_channels
        self.filters = filters

    def param_specs(self):
        c, f = self.in_channels, self.filters
        return {
            "kernel": ParamSpec((c, f), "glorot", fan_in=c, fan_out=f),
            "bias": ParamSpec((f,), "zeros"),
        }

    def out_channels(self, in_channels):
        self._check_in(in_channels, self.in_channels)
        return self.filters

    def forward(self, p, xs, ctx):
        x = xs[0]
        return x @ p["kernel"] + p["bias"], x

    def backward(self, p, cache, dy, grads):
        x = cache
        axes = tuple(range(dy.ndim - 1))
        grads["kernel"] += np.tensordot(x, dy, axes=(axes, axes))
        grads["bias"] += dy.sum(axis=axes)
        return [dy @ p["kernel"].T]


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = 0.01):
        self.slope = slope

    def forward(self, p, xs, ctx):
        x = xs[0]
        positive = x > 0
        return np.where(positive, x, self.slope * x), positive

    def backward(self, p, cache, dy, grads):
        return [np.where(cache, dy, self.slope * dy)]


class SpatialDropout(Layer):
    """Drops whole channels in train mode and rescales the survivors."""

    kind = "spatial_dropout"

    def __init__(self, rate: float = 0.1):
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"drop rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, p, xs, ctx):
        x = xs[0]
        if ctx.mode != TRAIN or self.rate == 0.0:
            return x, None
        N, C = x.shape[0], x.shape[-1]
        keep = (ctx.rng.random((N, 1, 1, C)) >= self.rate) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, p, cache, dy, grads):
        return [dy if cache is None else dy * cache]


class BatchNorm(Layer):
    """Per-channel normalization with running statistics for inference."""

    kind = "batch_norm"

    def __init__(self, channels: int, epsilon: float = 1e-3, momentum: float = 0.99):
        if not 0.0 <= momentum < 1.0:
            raise ParameterError(f"momentum must lie in [0, 1), got {momentum}")
        self.channels = channels
        self.epsilon = epsilon
        self.momentum = momentum

    def param_specs(self):
        c = (self.channels,)
        return {
            "gamma": ParamSpec(c, "ones"),
            "beta": ParamSpec(c, "zeros"),
            "moving_mean": ParamSpec(c, "zeros", trainable=False),
            "moving_var": ParamSpec(c, "ones", trainable=False),
        }

    def out_channels(self, in_channels):
        self._check_in(in_channels, self.channels)
        return self.channels

    def forward(self, p, xs, ctx):
        x = xs[0]
        axes = tuple(range(x.ndim - 1))
        if ctx.mode == TRAIN:
            if x.size == 0:
                raise ShapeError("batch_norm got an empty batch in train mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            p["moving_mean"][...] = m * p["moving_mean"] + (1.0 - m) * mean
            p["moving_var"][...] = m * p["moving_var"] + (1.0 - m) * var
        else:
            mean, var = p["moving_mean"], p["moving_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        return p["gamma"] * xhat + p["beta"], (xhat, inv_std, ctx.mode)

    def backward(self, p, cache, dy, grads):
        xhat, inv_std, mode = cache
        axes = tuple(range(dy.ndim - 1))
        grads["gamma"] += (dy * xhat).sum(axis=axes)
        grads["beta"] += dy.sum(axis=axes)
        dxhat = dy * p["gamma"]
        if mode != TRAIN:
            return [dxhat * inv_std]
        M = dy.size // dy.shape[-1]
        dx = inv_std / M * (M * dxhat - dxhat.sum(axis=axes)
                            - xhat * (dxhat * xhat).sum(axis=axes))
        return [dx]


class MultiHeadAttention(Layer):
    """
    Scaled dot-product cross attention along image rows.

    Inputs are query, key and value maps [N, H, W, 1]; each of the N*H rows is
    a sequence of W positions carrying a scalar feature, projected to
    ``heads`` x ``head_size``. Column attention is obtained by wrapping the
    layer between TransposeHW nodes.
    """

    kind = "multihead_attention"
    arity = 3

    def __init__(self, heads: int = 2, head_size: int = 64):
        if heads < 1 or head_size < 1:
            raise ParameterError("heads and head_size must be positive")
        self.heads = heads
        self.head_size = head_size

    def param_specs(self):
        width = self.heads * self.head_size
        specs = {}
        for name in ("query", "key", "value"):
            specs[f"{name}_kernel"] = ParamSpec((1, width), "glorot", fan_in=1, fan_out=width)
            specs[f"{name}_bias"] = ParamSpec((width,), "zeros")
        specs["output_kernel"] = ParamSpec((width, 1), "glorot", fan_in=width, fan_out=1)
        specs["output_bias"] = ParamSpec((1,), "zeros")
        return specs

    def out_channels(self, in_channels):
        self._check_arity(in_channels)
        if any(c != 1 for c in in_channels):
            raise ShapeError(f"attention expects single-channel inputs, got {in_channels}")
        return 1

    def _split(self, t: np.ndarray) -> np.ndarray:
        B, T, _ = t.shape
        return t.reshape(B, T, self.heads, self.head_size).transpose(0, 2, 1, 3)

    def _merge(self, t: np.ndarray) -> np.ndarray:
        B, h, T, D = t.shape
        return t.transpose(0, 2, 1, 3).reshape(B, T, h * D)

    def forward(self, p, xs, ctx):
        q, k, v = xs
        if not (q.shape == k.shape == v.shape):
            raise ShapeError(f"attention inputs differ: {q.shape}, {k.shape}, {v.shape}")
        N, H, W, _ = q.shape
        seqs = [t.reshape(N * H, W, 1) for t in (q, k, v)]
        Q = self._split(seqs[0] @ p["query_kernel"] + p["query_bias"])
        K = self._split(seqs[1] @ p["key_kernel"] + p["key_bias"])
        V = self._split(seqs[2] @ p["value_kernel"] + p["value_bias"])
        scale = 1.0 / np.sqrt(self.head_size)
        scores = Q @ K.transpose(0, 1, 3, 2) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        A = np.exp(scores)
        A /= A.sum(axis=-1, keepdims=True)
        O = self._merge(A @ V)
        y = O @ p["output_kernel"] + p["output_bias"]
        return y.reshape(N, H, W, 1), (seqs, Q, K, V, A, O, scale, (N, H, W))

    def backward(self, p, cache, dy, grads):
        seqs, Q, K, V, A, O, scale, (N, H, W) = cache
        dy = dy.reshape(N * H, W, 1)
        grads["output_kernel"] += np.einsum("btk,bto->ko", O, dy)
        grads["output_bias"] += dy.sum(axis=(0, 1))
        dO = self._split(dy @ p["output_kernel"].T)
        dA = dO @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dxs = []
        for name, seq, dproj in (("query", seqs[0], dQ), ("key", seqs[1], dK),
                                 ("value", seqs[2], dV)):
            dproj = self._merge(dproj)
            grads[f"{name}_kernel"] += np.einsum("bti,btk->ik", seq, dproj)
            grads[f"{name}_bias"] += dproj.sum(axis=(0, 1))
            dxs.append((dproj @ p[f"{name}_kernel"].T).reshape(N, H, W, 1))
        return dxs


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = "softmax"

    def forward(self, p, xs, ctx):
        x = xs[0]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def backward(self, p, cache, dy, grads):
        y = cache
        return [y * (dy - (dy * y).sum(axis=-1, keepdims=True))]


class GlobalAvgPoolMasked(Layer):
    """
    Per-channel sum of x over positions where the include map is positive,
    divided by the include map's total.

    For a binary include map this is the plain masked mean. When x was
    already multiplied by a graded include map it is the include-weighted
    mean. Inputs: x [N, H, W, C] and include [N, H, W, 1]; output [N, C].
    The include map is a constant and receives no gradient.
    """

    kind = "global_avg_pool_masked"
    arity = 2

    def out_channels(self, in_channels):
        self._check_arity(in_channels)
        if in_channels[1] != 1:
            raise ShapeError("include map must have a single channel")
        return in_channels[0]

    def forward(self, p, xs, ctx):
        x, include = xs
        support = (include > 0).astype(np.float64)
        counts = (include * support).sum(axis=(1, 2))
        if np.any(counts == 0):
            raise PoolingError()
        return (x * support).sum(axis=(1, 2)) / counts, (support, counts)

    def backward(self, p, cache, dy, grads):
        support, counts = cache
        return [dy[:, None, None, :] * support / counts[:, None, None, :], None]


class Concat(Layer):
    """Concatenate along the channel axis."""

    kind = "concat"
    arity = None

    def out_channels(self, in_channels):
        return int(sum(in_channels))

    def forward(self, p, xs, ctx):
        return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]

    def backward(self, p, cache, dy, grads):
        cuts = np.cumsum(cache)[:-1]
        return list(np.split(dy, cuts, axis=-1))


class Add(Layer):
    kind = "add"
    arity = None

    def out_channels(self, in_channels):
        if len(set(in_channels)) != 1:
            raise ShapeError(f"add needs equal channel counts, got {list(in_channels)}")
        return in_channels[0]

    def forward(self, p, xs, ctx):
        return sum(xs[1:], xs[0].copy()), len(xs)

    def backward(self, p, cache, dy, grads):
        return [dy] * cache


class PointwiseMultiply(Layer):
    """Elementwise product; single-channel inputs broadcast over channels."""

    kind = "pointwise_multiply"
    arity = None

    def out_channels(self, in_channels):
        wide = {c for c in in_channels if c != 1}
        if len(wide) > 1:
            raise ShapeError(f"cannot broadcast channel counts {list(in_channels)}")
        return wide.pop() if wide else 1

    def forward(self, p, xs, ctx):
        y = xs[0]
        for x in xs[1:]:
            y = y * x
        return y, xs

    def backward(self, p, cache, dy, grads):
        xs = cache
        dxs = []
        for i, x in enumerate(xs):
            g = dy
            for j, other in enumerate(xs):
                if j != i:
                    g = g * other
            if x.shape[-1] == 1 and g.shape[-1] != 1:
                g = g.sum(axis=-1, keepdims=True)
            dxs.append(g)
        return dxs


class TransposeHW(Layer):
    """Swap the two spatial axes."""

    kind = "transpose_hw"
    swaps_axes = True

    def forward(self, p, xs, ctx):
        return np.swapaxes(xs[0], 1, 2), None

    def backward(self, p, cache, dy, grads):
        return [np.swapaxes(dy, 1, 2)]


class ChannelSlice(Layer):
    """Channels [start, stop) of a spatial map."""

    kind = "channel_slice"

    def __init__(self, start: int, stop: int):
        if not 0 <= start < stop:
            raise ParameterError(f"bad channel range [{start}, {stop})")
        self.start = start
        self.stop = stop

    def out_channels(self, in_channels):
        self._check_arity(in_channels)
        if self.stop > in_channels[0]:
            raise ShapeError(f"channel range [{self.start}, {self.stop}) exceeds {in_channels[0]}")
        return self.stop - self.start

    def forward(self, p, xs, ctx):
        x = xs[0]
        return x[..., self.start:self.stop], x.shape

    def backward(self, p, cache, dy, grads):
        dx = np.zeros(cache)
        dx[..., self.start:self.stop] = dy
        return [dx]


class MeanOverMembers(Layer):
    """Elementwise mean of equally shaped inputs."""

    kind = "mean_over_members"
    arity = None

    def out_channels(self, in_channels):
        if len(set(in_channels)) != 1:
            raise ShapeError(f"members disagree on channels: {list(in_channels)}")
        return in_channels[0]

    def forward(self, p, xs, ctx):
        total = xs[0].copy()
        for x in xs[1:]:
            total += x
        return total / len(xs), len(xs)

    def backward(self, p, cache, dy, grads):
        return [dy / cache] * cache


LAYER_KINDS = {
    cls.kind: cls
    for cls in (SeparableAtrousConv2D, PointwiseConv2D, LeakyReLU, SpatialDropout,
                BatchNorm, MultiHeadAttention, Softmax, GlobalAvgPoolMasked, Concat,
                Add, PointwiseMultiply, TransposeHW, ChannelSlice, MeanOverMembers)
}
