# tests/flowdcn/tensor/test_gradcheck.py

# Third party imports
import numpy as np
from pytest import approx
from pytest import raises

# Local imports
from flowdcn._constants import GradcheckScope
from flowdcn.exceptions import ArgumentException
from flowdcn.tensor.gradcheck import COMPOSITE_TOLERANCE
from flowdcn.tensor.gradcheck import PRIMITIVE_TOLERANCE
from flowdcn.tensor.gradcheck import GradcheckRow
from flowdcn.tensor.gradcheck import central_difference
from flowdcn.tensor.gradcheck import check_model_entries
from flowdcn.tensor.gradcheck import check_msdcn
from flowdcn.tensor.gradcheck import check_primitives
from flowdcn.tensor.gradcheck import lattice_distance
from flowdcn.tensor.gradcheck import parameter_group
from flowdcn.tensor.gradcheck import relative_error
from flowdcn.tensor.gradcheck import run_gradcheck
from flowdcn.tensor.gradcheck import tiny_model_config


class TestHelpers:
    def test_relative_error_floor(self):
        """Test small gradients are compared against a floor of 1e-3"""
        assert relative_error(1.0, 1.0) == 0.0
        assert relative_error(2.0, 1.0) == approx(0.5)
        assert relative_error(0.0, 1e-6) == approx(1e-3)

    def test_central_difference_restores_value(self):
        """Test the perturbed element is restored and the derivative is exact for quadratics"""
        a = np.array([3.0, -2.0])
        derivative = central_difference(lambda: float(np.sum(a * a)), a, (0,))
        assert derivative == approx(6.0, rel=1e-8)
        np.testing.assert_array_equal(a, [3.0, -2.0])

    def test_lattice_distance(self):
        """Test the distance to the nearest integer line over both axes"""
        assert lattice_distance(np.array([0.5, 1.25]), np.array([2.4])) == approx(0.25)
        assert lattice_distance(np.array([1.0]), np.array([0.5])) == 0.0

    def test_parameter_group(self):
        """Test block parameters group by block and layer, others by top-level name"""
        assert parameter_group("blocks.0.dcn.weight.weight") == "blocks.0.dcn"
        assert parameter_group("blocks.1.mlp.gate.bias") == "blocks.1.mlp"
        assert parameter_group("t_embed.fc1.bias") == "t_embed"
        assert parameter_group("y_embed.table") == "y_embed"

    def test_row_line(self):
        """Test a report line shows status and tolerance"""
        row = GradcheckRow("msdcn", "plain.x", 2e-6, 100, 1e-4)
        assert row.passed
        assert row.line().endswith("ok")
        assert "n=100" in row.line()
        failing = GradcheckRow("msdcn", "plain.x", 2e-3, 100, 1e-4)
        assert not failing.passed
        assert failing.line().endswith("FAIL")


class TestChecks:
    def test_primitives_pass(self):
        """Test every primitive backward matches central differences to 1e-5"""
        rows = check_primitives(seed=0)
        groups = {row.group.split(".")[0] for row in rows}
        assert {
            "matmul_affine",
            "rms_norm",
            "layer_norm",
            "sigmoid",
            "silu",
            "gelu",
            "softmax",
            "modulate",
            "gated_residual",
            "swiglu",
            "ffn",
        } <= groups
        for row in rows:
            assert row.tolerance == PRIMITIVE_TOLERANCE
            assert row.passed, row.line()

    def test_msdcn_passes(self):
        """Test msdcn_backward matches central differences to 1e-4 for x and every parameter"""
        rows = check_msdcn(seed=0)
        groups = {row.group for row in rows}
        for variant in ("plain", "softmax_adjusted"):
            assert f"{variant}.x" in groups
            assert f"{variant}.dcn.offset.weight" in groups
            assert f"{variant}.dcn.scale_prior" in groups
            assert f"{variant}.dcn.direction_prior" in groups
        for row in rows:
            assert row.tolerance == COMPOSITE_TOLERANCE
            assert row.passed, row.line()

    def test_model_passes(self):
        """Test the full-model loss gradient at 20 random parameters"""
        rows = run_gradcheck(GradcheckScope.MODEL, seed=0)
        assert sum(row.checked for row in rows) == 20
        for row in rows:
            assert row.passed, row.line()

    def test_adaln_gate_entries(self):
        """Test the AdaLN gate columns of both blocks match central differences"""
        d = tiny_model_config().hidden
        entries = [
            ("blocks.0.adaln.weight", (3, 2 * d + 2)),
            ("blocks.0.adaln.bias", (2 * d + 5,)),
            ("blocks.1.adaln.weight", (5, 5 * d + 4)),
            ("blocks.1.adaln.bias", (5 * d,)),
        ]
        rows = check_model_entries(entries, seed=0)
        assert [row.group for row in rows] == sorted(name for name, _ in entries)
        for row in rows:
            assert row.checked == 1
            assert row.passed, row.line()

    def test_unknown_entry(self):
        """Test an unknown parameter name is rejected"""
        with raises(ArgumentException) as exc_info:
            check_model_entries([("blocks.9.adaln.weight", (0, 0))])
        assert exc_info.value.field_name == "entries"
