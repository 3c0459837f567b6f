"""Forward semantics and finite-difference gradient checks of every layer."""

import numpy as np
import pytest

from conftest import assert_gradient
from cxr_net.errors import ParameterError, PoolingError, ShapeError
from cxr_net.nn.graph import ModelGraph
from cxr_net.nn.layers import (
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


def single_layer_graph(layer, channels, seed=0):
    graph = ModelGraph("probe", seed)
    names = [graph.input(f"x{i}", c) for i, c in enumerate(channels)]
    graph.add("y", layer, *names)
    graph.set_outputs("y")
    return graph, names


def check_layer(layer, shapes, mode=TRAIN, seed=0, differentiable=None, rtol=1e-4):
    """
    Gradient check of ``sum(R * layer(xs))`` with respect to inputs and parameters.

    ``differentiable`` lists the input positions to probe (default: all).
    """
    rng = np.random.default_rng(seed)
    graph, names = single_layer_graph(layer, [s[-1] for s in shapes], seed)
    inputs = {n: rng.normal(size=s) for n, s in zip(names, shapes)}
    probe = rng.normal(size=graph.forward(inputs, mode)["y"].shape)

    def loss():
        graph.rng = np.random.default_rng(seed)
        return float(np.sum(graph.forward(inputs, mode)["y"] * probe))

    loss()
    grads = graph.backward({"y": probe})
    positions = range(len(names)) if differentiable is None else differentiable
    for i in positions:
        assert_gradient(loss, inputs[names[i]], grads.nodes[names[i]], rtol=rtol)
    for key, param in graph.params.items():
        if param.trainable:
            assert_gradient(loss, param.value, grads.params[key], rtol=rtol)


class TestSeparableAtrousConv:

    @pytest.mark.parametrize("kernel,dilation", [(3, 1), (3, 2), (5, 1), (3, 3)])
    def test_gradients(self, kernel, dilation):
        check_layer(SeparableAtrousConv2D(3, 4, kernel, dilation), [(2, 7, 6, 3)])

    def test_preserves_spatial_size(self, rng):
        graph, _ = single_layer_graph(SeparableAtrousConv2D(2, 5, 7, 1), [2])
        out = graph.forward({"x0": rng.normal(size=(1, 9, 11, 2))})["y"]
        assert out.shape == (1, 9, 11, 5)

    def test_reflect_border_on_constant_input(self):
        graph, _ = single_layer_graph(SeparableAtrousConv2D(1, 1, 3, 2), [1])
        graph.params["y/depthwise"].value[...] = 1.0
        graph.params["y/pointwise"].value[...] = 1.0
        out = graph.forward({"x0": np.full((1, 6, 6, 1), 2.0)})["y"]
        np.testing.assert_allclose(out, 18.0)

    @pytest.mark.parametrize("kernel,dilation", [(4, 1), (3, 0)])
    def test_invalid(self, kernel, dilation):
        with pytest.raises(ParameterError):
            SeparableAtrousConv2D(1, 1, kernel, dilation)

    def test_parameter_count(self):
        graph, _ = single_layer_graph(SeparableAtrousConv2D(51, 17, 3, 2), [51])
        assert graph.count_params().total == 3 * 3 * 51 + 51 * 17 + 17


class TestPointwiseAndActivations:

    def test_pointwise_gradients(self):
        check_layer(PointwiseConv2D(3, 2), [(2, 4, 5, 3)])

    def test_pointwise_on_vectors(self):
        check_layer(PointwiseConv2D(3, 2), [(4, 3)])

    def test_leaky_relu(self):
        check_layer(LeakyReLU(0.1), [(2, 4, 4, 3)])
        graph, _ = single_layer_graph(LeakyReLU(0.01), [1])
        out = graph.forward({"x0": np.array([[[[-2.0]], [[3.0]]]])})["y"]
        np.testing.assert_allclose(out.ravel(), [-0.02, 3.0])

    def test_softmax(self):
        check_layer(Softmax(), [(3, 4)])
        check_layer(Softmax(), [(1, 3, 3, 2)])

    def test_softmax_rows_sum_to_one(self, rng):
        graph, _ = single_layer_graph(Softmax(), [5])
        out = graph.forward({"x0": rng.normal(size=(4, 5)) * 50})["y"]
        np.testing.assert_allclose(out.sum(axis=1), 1.0)


class TestSpatialDropout:

    def test_inference_is_identity(self, rng):
        graph, _ = single_layer_graph(SpatialDropout(0.5), [4])
        x = rng.normal(size=(2, 3, 3, 4))
        np.testing.assert_array_equal(graph.forward({"x0": x}, INFER)["y"], x)

    def test_drops_whole_channels(self):
        graph, _ = single_layer_graph(SpatialDropout(0.5), [8])
        x = np.ones((3, 4, 4, 8))
        out = graph.forward({"x0": x}, TRAIN)["y"]
        per_channel = out.reshape(3, 16, 8)
        assert np.all(per_channel.min(axis=1) == per_channel.max(axis=1))
        assert set(np.unique(out)) <= {0.0, 2.0}

    def test_gradients(self):
        check_layer(SpatialDropout(0.3), [(2, 3, 3, 4)])

    def test_invalid_rate(self):
        with pytest.raises(ParameterError):
            SpatialDropout(1.0)


class TestBatchNorm:

    def test_train_gradients(self):
        check_layer(BatchNorm(3), [(4, 3, 3, 3)])

    def test_infer_gradients(self):
        check_layer(BatchNorm(3), [(2, 3, 3, 3)], mode=INFER)

    def test_train_normalizes_and_updates_running_stats(self, rng):
        graph, _ = single_layer_graph(BatchNorm(2, epsilon=0.0, momentum=0.5), [2])
        x = rng.normal(3.0, 2.0, size=(4, 5, 5, 2))
        out = graph.forward({"x0": x}, TRAIN)["y"]
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=(0, 1, 2)), 1.0, atol=1e-9)
        np.testing.assert_allclose(graph.params["y/moving_mean"].value,
                                   0.5 * x.mean(axis=(0, 1, 2)))

    def test_running_stats_are_not_trainable(self):
        graph, _ = single_layer_graph(BatchNorm(4), [4])
        counts = graph.count_params()
        assert counts.total == 8 and counts.non_trainable == 8


class TestMultiHeadAttention:

    def test_gradients(self):
        check_layer(MultiHeadAttention(2, 3), [(2, 3, 5, 1)] * 3)

    def test_gradients_single_head(self):
        check_layer(MultiHeadAttention(1, 4), [(1, 4, 4, 1)] * 3, seed=3)

    def test_rows_are_independent(self, rng):
        graph, names = single_layer_graph(MultiHeadAttention(2, 4), [1, 1, 1])
        xs = {n: rng.normal(size=(1, 3, 6, 1)) for n in names}
        base = graph.forward(xs)["y"].copy()
        xs["x2"][0, 1] += 1.0
        changed = graph.forward(xs)["y"]
        np.testing.assert_allclose(changed[0, 0], base[0, 0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(changed[0, 2], base[0, 2], rtol=0, atol=1e-12)
        assert not np.allclose(changed[0, 1], base[0, 1])

    def test_uniform_keys_average_values(self):
        graph, names = single_layer_graph(MultiHeadAttention(1, 2), [1, 1, 1])
        graph.params["y/value_kernel"].value[...] = 1.0
        graph.params["y/output_kernel"].value[...] = 0.5
        q = np.arange(4.0).reshape(1, 1, 4, 1)
        v = np.array([1.0, 2.0, 3.0, 6.0]).reshape(1, 1, 4, 1)
        out = graph.forward({"x0": q, "x1": np.zeros_like(q), "x2": v})["y"]
        np.testing.assert_allclose(out.ravel(), 3.0)

    def test_parameter_count(self):
        graph, _ = single_layer_graph(MultiHeadAttention(2, 64), [1, 1, 1])
        assert graph.count_params().total == 3 * (128 + 128) + 128 + 1

    def test_needs_single_channel_inputs(self):
        with pytest.raises(ShapeError):
            single_layer_graph(MultiHeadAttention(), [2, 1, 1])


class TestMaskedPooling:

    def test_mean_over_include_region(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        include = np.array([1.0, 0.0, 1.0, 0.0]).reshape(1, 2, 2, 1)
        graph, _ = single_layer_graph(GlobalAvgPoolMasked(), [2, 1])
        out = graph.forward({"x0": x, "x1": include})["y"]
        np.testing.assert_allclose(out, [[(0 + 4) / 2, (1 + 5) / 2]])

    def test_excluded_positions_do_not_matter(self, rng):
        graph, _ = single_layer_graph(GlobalAvgPoolMasked(), [3, 1])
        include = (rng.uniform(size=(2, 5, 5, 1)) > 0.5).astype(float)
        x = rng.normal(size=(2, 5, 5, 3))
        base = graph.forward({"x0": x, "x1": include})["y"].copy()
        x[np.broadcast_to(include == 0, x.shape)] += 100.0
        np.testing.assert_array_equal(graph.forward({"x0": x, "x1": include})["y"], base)

    def test_graded_include_is_weighted_mean(self):
        x = np.array([2.0, 4.0]).reshape(1, 1, 2, 1)
        include = np.array([0.5, 0.25]).reshape(1, 1, 2, 1)
        graph, _ = single_layer_graph(GlobalAvgPoolMasked(), [1, 1])
        out = graph.forward({"x0": x * include, "x1": include})["y"]
        np.testing.assert_allclose(out, [[(0.5 * 2 + 0.25 * 4) / 0.75]])

    def test_gradients(self):
        check_layer(GlobalAvgPoolMasked(), [(2, 4, 4, 3), (2, 4, 4, 1)], differentiable=[0])

    def test_empty_region(self):
        graph, _ = single_layer_graph(GlobalAvgPoolMasked(), [1, 1])
        with pytest.raises(PoolingError):
            graph.forward({"x0": np.ones((1, 3, 3, 1)), "x1": np.zeros((1, 3, 3, 1))})


class TestStructuralLayers:

    def test_concat(self):
        check_layer(Concat(), [(2, 3, 3, 2), (2, 3, 3, 1), (2, 3, 3, 3)])

    def test_add(self):
        check_layer(Add(), [(2, 3, 3, 2)] * 3)

    def test_pointwise_multiply_broadcasts(self):
        check_layer(PointwiseMultiply(), [(2, 3, 3, 1), (2, 3, 3, 4), (2, 3, 3, 1)])

    def test_transpose(self):
        check_layer(TransposeHW(), [(2, 3, 5, 2)])

    def test_channel_slice(self):
        check_layer(ChannelSlice(1, 3), [(2, 3, 3, 4)])

    def test_mean_over_members(self):
        check_layer(MeanOverMembers(), [(2, 3, 3, 2)] * 4)

    def test_add_channel_mismatch(self):
        with pytest.raises(ShapeError):
            single_layer_graph(Add(), [2, 3])

    def test_slice_out_of_range(self):
        with pytest.raises(ShapeError):
            single_layer_graph(ChannelSlice(2, 5), [4])
