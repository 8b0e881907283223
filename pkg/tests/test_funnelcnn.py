import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck
from murmurkit.errors import BadModelFile, ConfigError, NoCachedForward, NonFiniteInput, ShapeMismatch, ShapeUnderflow
from murmurkit.funnelcnn import (
    Conv2D,
    DepthwiseConv2D,
    MaxPool,
    ModelConfig,
    backward,
    build,
    flops_count,
    forward,
    layer_table,
    load_model,
    model_from_bytes,
    model_to_bytes,
    param_count,
    predict,
    predict_proba,
    save_model,
)
from oracles import conv2d_loops, depthwise_loops, funnel_counts, maxpool_loops


class TestLayersAgainstLoops:
    @pytest.mark.parametrize("k", [(1, 1), (2, 2), (3, 3), (2, 3)])
    def test_conv(self, rng, k):
        layer = Conv2D("c", k, 3, 4)
        layer.params["W"] = rng.standard_normal(layer.params["W"].shape)
        layer.params["b"] = rng.standard_normal(4)
        x = rng.standard_normal((2, 5, 6, 3))
        np.testing.assert_allclose(layer.forward(x, None), conv2d_loops(x, layer.params["W"], layer.params["b"]),
                                   atol=1e-12)

    @pytest.mark.parametrize("k", [(2, 2), (3, 3)])
    def test_depthwise(self, rng, k):
        layer = DepthwiseConv2D("d", k, 3)
        layer.params["W"] = rng.standard_normal(layer.params["W"].shape)
        layer.params["b"] = rng.standard_normal(3)
        x = rng.standard_normal((2, 5, 4, 3))
        np.testing.assert_allclose(layer.forward(x, None), depthwise_loops(x, layer.params["W"], layer.params["b"]),
                                   atol=1e-12)

    @pytest.mark.parametrize("shape", [(2, 8, 8, 3), (1, 7, 5, 2)])
    def test_maxpool(self, rng, shape):
        x = rng.standard_normal(shape)
        np.testing.assert_array_equal(MaxPool("p", (2, 2)).forward(x, None), maxpool_loops(x, 2, 2))

    def test_maxpool_tie_goes_to_first(self):
        x = np.ones((1, 2, 2, 1))
        p = MaxPool("p", (2, 2))
        cache = {}
        p.forward(x, cache)
        dx, _ = p.backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(dx[0, :, :, 0], [[1, 0], [0, 0]])


class TestGradients:
    @pytest.mark.parametrize("kind", gradcheck.LAYER_KINDS)
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_layer(self, kind, seed):
        assert gradcheck.check_layer(kind, seed) < 1e-4

    @pytest.mark.parametrize("head", ["sigmoid", "softmax"])
    def test_head(self, head):
        assert gradcheck.check_head(head, 0) < 1e-4

    @pytest.mark.parametrize("classes", [2, 3])
    def test_network(self, classes):
        assert gradcheck.check_network(5, classes) < 1e-4

    def test_module_backward_matches_method(self, rng):
        m = build(gradcheck.tiny_config(), 0)
        x = rng.uniform(-1, 1, (3, 6, 6, 1))
        y = np.array([0, 1, 1])
        forward(m, x, training=True)
        g = backward(m, x, y)
        _, g2 = m.loss_and_grads(x, y)
        for a, b in zip(g, g2):
            np.testing.assert_array_equal(a, b)

    def test_backward_needs_forward(self, rng):
        m = build(gradcheck.tiny_config(), 0)
        x = rng.uniform(-1, 1, (2, 6, 6, 1))
        with pytest.raises(NoCachedForward):
            backward(m, x, [0, 1])
        forward(m, x, training=True)
        with pytest.raises(NoCachedForward):
            backward(m, x + 1, [0, 1])


class TestModel:
    def test_default_counts(self):
        cfg = ModelConfig()
        assert param_count(cfg) == 2033
        assert layer_table(cfg)[0]["flops"] == 524288
        assert (param_count(cfg), flops_count(cfg)) == funnel_counts(64, 64)

    @given(st.sampled_from([32, 40, 48, 64, 96]), st.sampled_from([32, 64, 100]), st.integers(2, 5))
    @settings(max_examples=25, deadline=None)
    def test_counts_match_hand_formula(self, h, w, classes):
        cfg = ModelConfig(input_shape=(h, w, 1), num_classes=classes)
        heads = 1 if classes == 2 else classes
        assert (param_count(cfg), flops_count(cfg)) == funnel_counts(h, w, head_units=heads)
        assert build(cfg, 0).n_params() == param_count(cfg)

    def test_heads(self):
        assert ModelConfig().head == "sigmoid"
        assert ModelConfig(num_classes=4).head == "softmax"
        with pytest.raises(ConfigError):
            ModelConfig(num_classes=3, head="sigmoid")

    def test_underflow(self):
        with pytest.raises(ShapeUnderflow):
            build(ModelConfig(input_shape=(16, 16, 1)))

    def test_probabilities(self, rng):
        x = rng.uniform(-1, 1, (5, 64, 64, 1))
        p = predict_proba(build(ModelConfig(), 0), x)
        assert p.shape == (5, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        p3 = predict_proba(build(ModelConfig(num_classes=3), 0), x)
        np.testing.assert_allclose(p3.sum(axis=1), 1.0)
        assert np.all(predict(build(ModelConfig(num_classes=3), 0), x) == np.argmax(p3, axis=1))

    def test_single_sample(self, rng):
        m = build(ModelConfig(), 0)
        x = rng.uniform(-1, 1, (64, 64, 1))
        np.testing.assert_allclose(predict_proba(m, x)[0], predict_proba(m, x[None])[0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            predict(build(ModelConfig(), 0), np.zeros((1, 32, 32, 1)))

    def test_nonfinite(self):
        x = np.zeros((1, 64, 64, 1))
        x[0, 0, 0, 0] = np.inf
        with pytest.raises(NonFiniteInput):
            predict(build(ModelConfig(), 0), x)

    def test_init_is_seeded_glorot(self):
        a, b = build(ModelConfig(), 3), build(ModelConfig(), 3)
        for s, t in zip(a.tensors(), b.tensors()):
            np.testing.assert_array_equal(s, t)
        w = a.param_layers[0].params["W"]
        assert np.abs(w).max() <= np.sqrt(6.0 / (4 * 1 + 4 * 16))
        assert all(np.all(l.params["b"] == 0) for l in a.param_layers)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        m = build(ModelConfig(class_names=("murmur", "normal")), 1)
        size = save_model(tmp_path / "m.fnet", m)
        back = load_model(tmp_path / "m.fnet")
        assert size == (tmp_path / "m.fnet").stat().st_size
        assert back.cfg == m.cfg
        for a, b in zip(back.tensors(), m.tensors()):
            np.testing.assert_array_equal(a, b.astype(np.float32))
        assert model_to_bytes(back) == model_to_bytes(m)

    def test_header(self):
        raw = model_to_bytes(build(ModelConfig(), 0))
        assert raw[:4] == b"FNET" and raw[4:6] == b"\x01\x00"

    def test_crc_detects_corruption(self):
        raw = bytearray(model_to_bytes(build(ModelConfig(), 0)))
        raw[100] ^= 0xFF
        with pytest.raises(BadModelFile):
            model_from_bytes(bytes(raw))

    def test_bad_magic(self):
        raw = model_to_bytes(build(ModelConfig(), 0))
        with pytest.raises(BadModelFile):
            model_from_bytes(b"XXXX" + raw[4:])
