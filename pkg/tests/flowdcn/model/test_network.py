# tests/flowdcn/model/test_network.py

# Third party imports
import numpy as np
from pytest import fixture
from pytest import raises

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ResolutionException
from flowdcn.exceptions import ShapeException
from flowdcn.exceptions import StateException
from flowdcn.model.network import FlowDCN
from flowdcn.model.network import patchify_rearrange
from flowdcn.model.network import timestep_embedding
from flowdcn.model.network import unpatchify
from flowdcn.tensor.tape import Tape
from flowdcn.utils.helpers import rng_stream


@fixture
def busy_model(tiny_config_factory):
    """Fixture to provide a model whose zero-initialized projections were perturbed"""
    config = tiny_config_factory(patch=2, train_resolution=(4, 4))
    fresh = FlowDCN(config, seed=3)
    rng = rng_stream(3, "perturb")
    params = {
        name: value + 0.1 * rng.standard_normal(value.shape)
        for name, value in fresh.params.items()
    }
    return FlowDCN(config, params=params)


class TestPatchify:
    def test_index_formula(self):
        """Test out[b, i, j, (a p + c) C + ch] = x[b, i p + a, j p + c, ch] for p=2"""
        x = np.arange(16, dtype=np.float64).reshape(1, 4, 4, 1)
        z = patchify_rearrange(x, 2)
        assert z.shape == (1, 2, 2, 4)
        np.testing.assert_array_equal(z[0, 0, 0], [0, 1, 4, 5])
        np.testing.assert_array_equal(z[0, 1, 1], [10, 11, 14, 15])

    def test_unpatchify_inverts(self, rng):
        """Test unpatchify restores the image bit for bit"""
        x = rng.standard_normal((2, 6, 4, 3))
        np.testing.assert_array_equal(unpatchify(patchify_rearrange(x, 2), 2, 3), x)

    def test_not_divisible(self):
        """Test H or W not divisible by p raises ResolutionException"""
        with raises(ResolutionException):
            patchify_rearrange(np.zeros((1, 5, 4, 1)), 2)

    def test_unpatchify_depth_mismatch(self):
        """Test a token depth other than p*p*C is a shape error"""
        with raises(ShapeException):
            unpatchify(np.zeros((1, 2, 2, 5)), 2, 1)


def test_timestep_embedding():
    """Test the embedding is bounded, has cosine then sine halves and differs across t"""
    emb = timestep_embedding(np.array([0.0, 0.5, 1.0]), 16)
    assert emb.shape == (3, 16)
    assert np.all(np.abs(emb) <= 1.0)
    np.testing.assert_array_equal(emb[0, :8], np.ones(8))
    np.testing.assert_array_equal(emb[0, 8:], np.zeros(8))
    assert not np.allclose(emb[1], emb[2])


class TestForward:
    def test_fresh_model_outputs_zero(self, tiny_model_factory, rng):
        """Test a freshly initialized model predicts exactly zero velocity"""
        model = tiny_model_factory()
        v = model(rng.standard_normal((2, 4, 4, 2)), 0.3, [0, 1])
        assert v.shape == (2, 4, 4, 2)
        np.testing.assert_array_equal(v, 0.0)

    def test_unbatched_input(self, busy_model, rng):
        """Test [H, W, C] input returns [H, W, C] equal to the batched row"""
        x = rng.standard_normal((4, 4, 2))
        v = busy_model(x, 0.5, 1)
        assert v.shape == (4, 4, 2)
        np.testing.assert_allclose(v, busy_model(x[None], 0.5, [1])[0], rtol=1e-12, atol=1e-14)

    def test_labels_and_time_condition(self, busy_model, rng):
        """Test the output depends on the label and on t"""
        x = rng.standard_normal((1, 4, 4, 2))
        base = busy_model(x, 0.5, 0)
        assert not np.allclose(base, busy_model(x, 0.5, 1))
        assert not np.allclose(base, busy_model(x, 0.9, 0))
        null = busy_model(x, 0.5, busy_model.null_label)
        assert np.all(np.isfinite(null))

    def test_unknown_label(self, tiny_model_factory):
        """Test label ids outside 0..num_classes are argument errors"""
        model = tiny_model_factory()
        x = np.zeros((1, 4, 4, 2))
        for label in (-1, model.null_label + 1):
            with raises(ArgumentException) as exc_info:
                model(x, 0.5, label)
            assert exc_info.value.field_name == "label"

    def test_resolution_not_divisible(self, busy_model):
        """Test an image size the patch does not divide is rejected"""
        with raises(ResolutionException):
            busy_model(np.zeros((1, 5, 4, 2)), 0.5, 0)

    def test_wrong_channel_count(self, busy_model):
        """Test the channel axis must match in_channels"""
        with raises(ShapeException):
            busy_model(np.zeros((1, 4, 4, 3)), 0.5, 0)

    def test_other_resolution(self, busy_model, rng):
        """Test the same parameters run at a larger, non-square resolution"""
        x = rng.standard_normal((1, 8, 12, 2))
        plain = busy_model(x, 0.4, 2)
        adjusted = busy_model(x, 0.4, 2, adjust=busy_model.resolution_adjust(8, 12))
        assert plain.shape == x.shape
        assert np.all(np.isfinite(plain))
        assert np.all(np.isfinite(adjusted))

    def test_resolution_adjust(self, busy_model):
        """Test adjustment factors are the resolution ratios to the training size"""
        assert busy_model.resolution_adjust(4, 4) == (1.0, 1.0)
        assert busy_model.resolution_adjust(8, 12) == (2.0, 3.0)

    def test_params_must_match_config(self, tiny_config_factory):
        """Test a parameter dict with the wrong names or shapes is refused"""
        config = tiny_config_factory()
        params = FlowDCN(config).params
        missing = {k: v for k, v in params.items() if k != "final.linear.bias"}
        with raises(ShapeException):
            FlowDCN(config, params=missing)
        reshaped = dict(params)
        reshaped["final.linear.bias"] = np.zeros(7)
        with raises(ShapeException):
            FlowDCN(config, params=reshaped)

    def test_seed_determines_params(self, tiny_model_factory):
        """Test the same seed builds identical parameters and another seed does not"""
        a, b, c = tiny_model_factory(seed=5), tiny_model_factory(seed=5), tiny_model_factory(seed=6)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert not np.array_equal(a.params["x_embed.weight"], c.params["x_embed.weight"])


class TestBackward:
    def test_shapes(self, busy_model, rng):
        """Test backward returns dx like x and one gradient per parameter"""
        x = rng.standard_normal((2, 4, 4, 2))
        tape = Tape()
        v = busy_model.forward(x, np.array([0.2, 0.7]), [0, 3], tape=tape)
        dx, grads = busy_model.backward(np.ones_like(v), tape)
        assert dx.shape == x.shape
        assert list(grads) == list(busy_model.params)
        for name, grad in grads.items():
            assert grad.shape == busy_model.params[name].shape
            assert np.all(np.isfinite(grad))

    def test_directional_derivative(self, busy_model, rng):
        """Test <dx, u> matches a central difference of <v, g> along u"""
        x = rng.standard_normal((1, 4, 4, 2))
        g = rng.standard_normal(x.shape)
        u = rng.standard_normal(x.shape)
        tape = Tape()
        busy_model.forward(x, 0.3, 1, tape=tape)
        dx, _ = busy_model.backward(g, tape)
        eps = 1e-6
        plus = np.sum(busy_model(x + eps * u, 0.3, 1) * g)
        minus = np.sum(busy_model(x - eps * u, 0.3, 1) * g)
        numeric = (plus - minus) / (2 * eps)
        np.testing.assert_allclose(np.sum(dx * u), numeric, rtol=1e-3, atol=1e-8)

    def test_without_forward(self, busy_model):
        """Test backward on an empty tape is a state error"""
        with raises(StateException):
            busy_model.backward(np.ones((1, 4, 4, 2)), Tape())
