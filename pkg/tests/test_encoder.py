import numpy as np
import pytest

from selflearn import autodiff as ad
from selflearn.autodiff import Tape, Tensor
from selflearn.checkpoint import model_to_checkpoint
from selflearn.encoder import EncoderModel, EncoderSpec, init_parameters
from selflearn.errors import ConfigError, ShapeError, TransferIncompatibleError

from .helpers import central_difference, relative_error


def identity_model(d=3):
    spec = EncoderSpec(input_dim=d, hidden=(), embedding_dim=d)
    return EncoderModel(spec, {"layer0.weight": np.eye(d), "layer0.bias": np.zeros(d)})


def test_layer_chain():
    spec = EncoderSpec(input_dim=5, hidden=(8, 4), embedding_dim=3)
    layers = spec.layers()
    assert [(l.in_width, l.out_width) for l in layers] == [(5, 8), (8, 4), (4, 3)]
    assert [l.activation for l in layers] == ["relu", "relu", "none"]


def test_identity_embed():
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(identity_model().embed(x).data, x)


def test_embed_shape_and_duplicate_rows():
    model = init_parameters(EncoderSpec(input_dim=6, embedding_dim=5), seed=1)
    x = np.random.default_rng(1).normal(size=(7, 6))
    x[3] = x[0]
    emb = model.embed(x).data
    assert emb.shape == (7, 5)
    np.testing.assert_array_equal(emb[3], emb[0])


def test_embed_rejects_wrong_width():
    with pytest.raises(ShapeError):
        identity_model().embed(np.ones((2, 4)))


def test_permutation_equivariance():
    model = init_parameters(EncoderSpec(input_dim=4), seed=2)
    x = np.random.default_rng(2).normal(size=(10, 4))
    perm = np.random.default_rng(3).permutation(10)
    np.testing.assert_allclose(model.embed(x[perm]).data, model.embed(x).data[perm], rtol=0, atol=1e-14)


class TestLogits:
    def test_identity_head(self):
        model = identity_model()
        model.params["head.weight"] = np.eye(3)
        model.params["head.bias"] = np.zeros(3)
        e = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(model.logits(e).data, e)

    def test_bias_only(self):
        model = identity_model()
        model.params["head.weight"] = np.zeros((3, 4))
        model.params["head.bias"] = np.ones(4)
        np.testing.assert_array_equal(model.logits(np.ones((2, 3))).data, np.ones((2, 4)))

    def test_random_2x3_against_hand_multiply(self):
        rng = np.random.default_rng(5)
        e, w, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 3)), rng.normal(size=3)
        model = identity_model(2)
        model.params["head.weight"] = w
        model.params["head.bias"] = b
        expected = [[sum(e[i, k] * w[k, j] for k in range(2)) + b[j] for j in range(3)] for i in range(2)]
        np.testing.assert_allclose(model.logits(e).data, expected, rtol=1e-14)

    def test_missing_head(self):
        with pytest.raises(ConfigError):
            identity_model().logits(np.ones((1, 3)))


class TestInit:
    spec = EncoderSpec(input_dim=4, hidden=(6,), embedding_dim=3)

    def test_same_seed_identical(self):
        a = init_parameters(self.spec, 7, head="linear", num_classes=3)
        b = init_parameters(self.spec, 7, head="linear", num_classes=3)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_different_seeds_differ(self):
        a = init_parameters(self.spec, 7)
        b = init_parameters(self.spec, 8)
        assert not np.array_equal(a.params["layer0.weight"], b.params["layer0.weight"])

    def test_glorot_bounds_and_zero_bias(self):
        m = init_parameters(EncoderSpec(input_dim=40, hidden=(60,), embedding_dim=8), 0)
        limit = np.sqrt(6 / 100)
        assert np.abs(m.params["layer0.weight"]).max() <= limit
        assert np.abs(m.params["layer0.weight"]).max() > 0.9 * limit
        assert not m.params["layer0.bias"].any()

    def test_from_checkpoint_round_trip(self):
        src = init_parameters(self.spec, 3)
        ckpt = model_to_checkpoint(src)
        dst = init_parameters(self.spec, 99, "from_checkpoint", checkpoint=ckpt)
        again = model_to_checkpoint(dst)
        for k in src.params:
            assert again.params[k].tobytes() == src.params[k].tobytes()

    def test_from_checkpoint_shape_mismatch(self):
        ckpt = model_to_checkpoint(init_parameters(self.spec, 3))
        other = EncoderSpec(input_dim=4, hidden=(7,), embedding_dim=3)
        with pytest.raises(TransferIncompatibleError):
            init_parameters(other, 0, "from_checkpoint", checkpoint=ckpt)

    def test_head_restrictions(self):
        with pytest.raises(ConfigError):
            init_parameters(self.spec, 0, head="linear")
        with pytest.raises(ConfigError):
            init_parameters(self.spec, 0, scheme="xavier")


def test_gradient_wrt_every_parameter():
    spec = EncoderSpec(input_dim=3, hidden=(5,), embedding_dim=4)
    model = init_parameters(spec, 11, head="linear", num_classes=3)
    rng = np.random.default_rng(0)
    for name in model.params:
        model.params[name] = model.params[name] + rng.uniform(-0.3, 0.3, size=model.params[name].shape)
    x = rng.uniform(-2, 2, size=(6, 3))

    def loss(params):
        return ad.sum(ad.square(model.logits(model.embed(x, params), params)))

    tensors = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
    with Tape() as tape:
        out = loss(tensors)
    grads = dict(zip(tensors, tape.gradient(out, list(tensors.values()))))
    for name, value in model.params.items():
        def f(v, name=name):
            p = {k: Tensor(w) for k, w in model.params.items()}
            p[name] = Tensor(v)
            return loss(p).data
        assert relative_error(grads[name], central_difference(f, value)) < 1e-4, name
