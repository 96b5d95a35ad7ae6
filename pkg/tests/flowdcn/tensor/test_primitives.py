# tests/flowdcn/tensor/test_primitives.py

# Third party imports
import numpy as np
from pytest import approx
from pytest import mark
from pytest import raises

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ShapeException
from flowdcn.tensor.primitives import LinearParams
from flowdcn.tensor.primitives import ffn
from flowdcn.tensor.primitives import gated_residual
from flowdcn.tensor.primitives import gelu
from flowdcn.tensor.primitives import layer_norm
from flowdcn.tensor.primitives import matmul_affine
from flowdcn.tensor.primitives import matmul_affine_backward
from flowdcn.tensor.primitives import modulate
from flowdcn.tensor.primitives import rms_norm
from flowdcn.tensor.primitives import sigmoid
from flowdcn.tensor.primitives import silu
from flowdcn.tensor.primitives import softmax
from flowdcn.tensor.primitives import stable_sigmoid
from flowdcn.tensor.primitives import swiglu
from flowdcn.tensor.tape import Tape


def _lin(weight, bias) -> LinearParams:
    return LinearParams(np.asarray(weight, dtype=np.float64), np.asarray(bias, dtype=np.float64))


class TestLinearParams:
    def test_shapes_validated(self):
        """Test weight must be 2-D and bias must match its columns"""
        with raises(ShapeException):
            LinearParams(np.zeros(3), np.zeros(3))
        with raises(ShapeException):
            LinearParams(np.zeros((3, 2)), np.zeros(3))
        p = LinearParams(np.zeros((3, 2)), np.zeros(2))
        assert p.in_dim == 3
        assert p.out_dim == 2


class TestMatmulAffine:
    def test_identity(self):
        """Test the identity map returns the input"""
        y = matmul_affine(np.array([1.0, 2.0]), _lin([[1, 0], [0, 1]], [0, 0]))
        np.testing.assert_array_equal(y, [1.0, 2.0])

    def test_hand_sum(self):
        """Test 1*2 + 1*3 + 1 = 6"""
        y = matmul_affine(np.array([1.0, 1.0]), _lin([[2], [3]], [1]))
        np.testing.assert_array_equal(y, [6.0])

    def test_matches_triple_loop_exactly(self, rng):
        """Test the result is bit-identical to a plain loop in index order"""
        x = rng.standard_normal((3, 4))
        p = LinearParams(rng.standard_normal((4, 2)), rng.standard_normal(2))
        expected = np.empty((3, 2))
        for row in range(3):
            for j in range(2):
                acc = x[row, 0] * p.weight[0, j]
                for i in range(1, 4):
                    acc = acc + x[row, i] * p.weight[i, j]
                expected[row, j] = acc + p.bias[j]
        np.testing.assert_array_equal(matmul_affine(x, p), expected)

    def test_dimension_mismatch(self):
        """Test a wrong input width raises ShapeException"""
        with raises(ShapeException):
            matmul_affine(np.ones((2, 3)), _lin(np.ones((4, 2)), np.zeros(2)))

    def test_tape_requires_key(self):
        """Test recording on a tape without a key is an argument error"""
        with raises(ArgumentException):
            matmul_affine(np.ones(2), _lin(np.eye(2), np.zeros(2)), Tape())

    def test_backward_shapes_and_values(self, rng):
        """Test backward returns x^T g for the weight and the row sum for the bias"""
        x = rng.standard_normal((5, 3))
        p = LinearParams(rng.standard_normal((3, 2)), np.zeros(2))
        tape = Tape()
        matmul_affine(x, p, tape, "lin")
        g = rng.standard_normal((5, 2))
        dx, dp = matmul_affine_backward(g, tape, "lin")
        np.testing.assert_allclose(dx, g @ p.weight.T)
        np.testing.assert_allclose(dp.weight, x.T @ g)
        np.testing.assert_allclose(dp.bias, g.sum(axis=0))


class TestNorms:
    def test_rms_norm_unit_input(self):
        """Test unit-RMS input is returned up to eps"""
        y = rms_norm(np.ones(4), np.ones(4))
        np.testing.assert_allclose(y, np.ones(4), atol=1e-6)

    def test_rms_norm_zero_input(self):
        """Test zero input stays zero"""
        np.testing.assert_array_equal(rms_norm(np.zeros(2), np.ones(2)), [0.0, 0.0])

    def test_rms_norm_three_four(self):
        """Test [3, 4] / sqrt(12.5)"""
        y = rms_norm(np.array([3.0, 4.0]), np.ones(2), eps=1e-15)
        np.testing.assert_allclose(y, [0.8485281374, 1.1313708499], rtol=1e-9)

    def test_rms_norm_scale_invariant(self, rng):
        """Test rms_norm(a x) == rms_norm(x) for a > 0 with a negligible eps"""
        x = rng.standard_normal((3, 6))
        gain = rng.standard_normal(6)
        np.testing.assert_allclose(
            rms_norm(7.5 * x, gain, eps=1e-15), rms_norm(x, gain, eps=1e-15)
        )

    def test_rms_norm_negative_eps(self):
        """Test a negative eps is rejected"""
        with raises(ArgumentException):
            rms_norm(np.ones(2), np.ones(2), eps=-1.0)

    @mark.parametrize("norm", ["rms", "layer"])
    def test_norm_zero_eps(self, norm):
        """Test eps = 0 is rejected by both norms"""
        with raises(ArgumentException) as exc_info:
            if norm == "rms":
                rms_norm(np.ones(2), np.ones(2), eps=0.0)
            else:
                layer_norm(np.ones(2), np.ones(2), np.zeros(2), eps=0.0)
        assert exc_info.value.field_name == "eps"

    def test_layer_norm_moments(self, rng):
        """Test layer_norm output has zero mean and unit variance per row"""
        y = layer_norm(rng.standard_normal((4, 16)), np.ones(16), np.zeros(16), eps=1e-15)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-12)


class TestNonlinearities:
    def test_sigmoid_values(self):
        """Test sigmoid at 0, 1 and far out in both directions"""
        s = sigmoid(np.array([0.0, 1.0, -800.0, 800.0]))
        assert s[0] == 0.5
        assert s[1] == approx(0.7310585786)
        assert s[2] == 0.0
        assert s[3] == 1.0
        assert np.all(np.isfinite(s))

    def test_stable_sigmoid_symmetry(self, rng):
        """Test sigmoid(-z) == 1 - sigmoid(z)"""
        z = rng.standard_normal(50) * 5
        np.testing.assert_allclose(stable_sigmoid(-z), 1.0 - stable_sigmoid(z), atol=1e-15)

    def test_silu(self):
        """Test silu(0) = 0 and silu(1) = sigmoid(1)"""
        y = silu(np.array([0.0, 1.0]))
        assert y[0] == 0.0
        assert y[1] == approx(0.7310585786)

    def test_gelu(self):
        """Test gelu is 0 at 0 and close to identity for large inputs"""
        y = gelu(np.array([0.0, 10.0, -10.0]))
        assert y[0] == 0.0
        assert y[1] == approx(10.0)
        assert y[2] == approx(0.0, abs=1e-12)

    def test_softmax_rows_sum_to_one(self, rng):
        """Test softmax rows are probability vectors and large logits are safe"""
        z = rng.standard_normal((3, 9))
        z[0, 0] = 1000.0
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0)
        assert p[0, 0] == approx(1.0)

    def test_softmax_single_row_matches_stack(self, rng):
        """Test a row alone and inside a stack give the same bits"""
        z = rng.standard_normal((4, 9))
        np.testing.assert_array_equal(softmax(z)[2], softmax(z[2]))


class TestConditioning:
    def test_modulate(self, rng):
        """Test x * (1 + scale) + shift with per-sample vectors"""
        x = rng.standard_normal((2, 3, 3, 4))
        shift = rng.standard_normal((2, 4))
        scale = rng.standard_normal((2, 4))
        y = modulate(x, shift, scale)
        np.testing.assert_allclose(y[1, 2, 0], x[1, 2, 0] * (1 + scale[1]) + shift[1])

    def test_zero_modulation_is_identity(self, rng):
        """Test zero shift and scale return x"""
        x = rng.standard_normal((1, 2, 2, 3))
        np.testing.assert_array_equal(modulate(x, np.zeros((1, 3)), np.zeros((1, 3))), x)

    def test_gated_residual_zero_gate(self, rng):
        """Test a zero gate passes the residual stream through"""
        x = rng.standard_normal((1, 2, 2, 3))
        branch = rng.standard_normal((1, 2, 2, 3))
        np.testing.assert_array_equal(gated_residual(x, np.zeros((1, 3)), branch), x)


class TestMlpBlocks:
    def test_swiglu_zero_input(self):
        """Test zero input with zero biases gives zero"""
        d, hidden = 3, 5
        gate = _lin(np.ones((d, hidden)), np.zeros(hidden))
        up = _lin(np.ones((d, hidden)), np.zeros(hidden))
        down = _lin(np.ones((hidden, d)), np.zeros(d))
        np.testing.assert_array_equal(swiglu(np.zeros(d), gate, up, down), np.zeros(d))

    def test_swiglu_scalar_chain(self):
        """Test D = D_hidden = 1 with unit weights: silu(1) * 1"""
        one = _lin([[1.0]], [0.0])
        y = swiglu(np.array([1.0]), one, one, one)
        assert y[0] == approx(0.7310585786)

    def test_swiglu_hidden_mismatch(self):
        """Test disagreeing hidden widths raise ShapeException"""
        with raises(ShapeException):
            swiglu(
                np.zeros(2),
                _lin(np.ones((2, 3)), np.zeros(3)),
                _lin(np.ones((2, 4)), np.zeros(4)),
                _lin(np.ones((3, 2)), np.zeros(2)),
            )

    def test_ffn_zero_weights(self):
        """Test ffn with zero weights returns the output bias"""
        fc1 = _lin(np.zeros((2, 8)), np.zeros(8))
        fc2 = _lin(np.zeros((8, 2)), np.array([0.5, -0.5]))
        np.testing.assert_array_equal(ffn(np.ones((3, 2)), fc1, fc2), np.tile([0.5, -0.5], (3, 1)))
