# tests/flowdcn/tensor/test_tape.py

# Third party imports
import numpy as np
from pytest import raises

# Local imports
from flowdcn.exceptions import StateException
from flowdcn.tensor.primitives import LinearParams
from flowdcn.tensor.primitives import matmul_affine
from flowdcn.tensor.primitives import matmul_affine_backward
from flowdcn.tensor.primitives import sigmoid_backward
from flowdcn.tensor.tape import Tape


def test_record_and_fetch():
    """Test recorded intermediates are returned by (key, op)"""
    tape = Tape()
    tape.record("blocks.0.mlp", "silu", z=np.ones(2))
    assert ("blocks.0.mlp", "silu") in tape
    assert len(tape) == 1
    np.testing.assert_array_equal(tape.fetch("blocks.0.mlp", "silu")["z"], np.ones(2))
    assert list(tape) == [("blocks.0.mlp", "silu")]


def test_fetch_missing_raises_state_error():
    """Test fetching an unrecorded call raises StateException naming the key"""
    tape = Tape()
    with raises(StateException) as exc_info:
        tape.fetch("final.linear", "matmul_affine")
    assert exc_info.value.field_name == "final.linear"
    assert "matmul_affine" in exc_info.value.message


def test_op_name_is_part_of_the_key():
    """Test the same call-site key with another op is a different entry"""
    tape = Tape()
    tape.record("k", "sigmoid", s=np.ones(1))
    with raises(StateException):
        tape.fetch("k", "silu")


def test_clear():
    """Test clear drops every entry"""
    tape = Tape()
    tape.record("a", "op", v=np.zeros(1))
    tape.clear()
    assert len(tape) == 0
    with raises(StateException):
        tape.fetch("a", "op")


def test_backward_without_forward_is_state_error():
    """Test backward functions refuse to run without their forward intermediates"""
    tape = Tape()
    with raises(StateException):
        sigmoid_backward(np.ones(3), tape, "missing")
    p = LinearParams(np.eye(2), np.zeros(2))
    matmul_affine(np.ones((1, 2)), p, tape, "present")
    with raises(StateException):
        matmul_affine_backward(np.ones((1, 2)), tape, "absent")
