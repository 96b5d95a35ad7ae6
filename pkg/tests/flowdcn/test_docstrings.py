# tests/flowdcn/test_docstrings.py

# Standard library imports
from inspect import getdoc
from re import search
from typing import Callable
from typing import List

# Third party imports
from pytest import fail
from pytest import mark

# fmt: off
# isort: off
from flowdcn.bench.harness import fit_exponent
from flowdcn.bench.kernels import attention_reference
from flowdcn.bench.kernels import dcn_blocked
from flowdcn.data.metrics import mmd_rbf
from flowdcn.data.metrics import moment_report
from flowdcn.flow.objective import interpolate
from flowdcn.flow.objective import make_batch
from flowdcn.flow.objective import target_velocity
from flowdcn.flow.trainer import train_step
from flowdcn.io.checkpoint import encode_checkpoint
from flowdcn.io.run_config import parse_run_config
from flowdcn.model.config import named_config
from flowdcn.model.config import parameter_shapes
from flowdcn.model.network import FlowDCN
from flowdcn.model.network import patchify_rearrange
from flowdcn.model.network import unpatchify
from flowdcn.ops.msdcn import bilinear_sample
from flowdcn.ops.msdcn import flops_count
from flowdcn.ops.msdcn import init_msdcn_params
from flowdcn.ops.msdcn import msdcn_backward
from flowdcn.ops.msdcn import msdcn_forward
from flowdcn.ops.msdcn import msdcn_oracle
from flowdcn.ops.msdcn import smax_adjust
from flowdcn.ops.msdcn import static_conv_forward
from flowdcn.ops.priors import direction_prior
from flowdcn.ops.priors import init_scale_priors
from flowdcn.sampler import cfg_velocity
from flowdcn.sampler import euler_maruyama
from flowdcn.sampler import euler_ode
from flowdcn.sampler import sample
from flowdcn.sampler import score_from_velocity
from flowdcn.tensor.primitives import matmul_affine
from flowdcn.tensor.primitives import rms_norm
from flowdcn.tensor.primitives import softmax
# isort: on
# fmt: on


def get_core_operations() -> List[Callable]:
    """Return the public operations whose docstrings must be complete"""
    return [
        msdcn_forward,
        msdcn_backward,
        msdcn_oracle,
        static_conv_forward,
        bilinear_sample,
        flops_count,
        smax_adjust,
        init_msdcn_params,
        init_scale_priors,
        direction_prior,
        matmul_affine,
        rms_norm,
        softmax,
        patchify_rearrange,
        unpatchify,
        FlowDCN.forward,
        FlowDCN.backward,
        named_config,
        parameter_shapes,
        interpolate,
        target_velocity,
        make_batch,
        train_step,
        cfg_velocity,
        score_from_velocity,
        euler_ode,
        euler_maruyama,
        sample,
        mmd_rbf,
        moment_report,
        dcn_blocked,
        attention_reference,
        fit_exponent,
        encode_checkpoint,
        parse_run_config,
    ]


@mark.parametrize("section_name", ["Args:", "Returns:"])
def test_operation_docstring_has_required_section(section_name):
    """Test that every core operation documents its arguments and result"""
    failures = []

    for operation in get_core_operations():
        docstring = getdoc(operation)
        if not docstring or not search(rf"{section_name}", docstring):
            failures.append(f"{operation.__qualname__} missing {section_name}")

    if failures:
        fail_msg = f"The following operations are missing the {section_name} section:\n"
        fail_msg += "\n".join(failures)
        fail(fail_msg)


def test_docstring_sections_order():
    """Test that docstring sections appear in the correct order when present"""
    expected_order = ["Args:", "Returns:", "Raises:"]
    failures = []

    for operation in get_core_operations():
        docstring = getdoc(operation) or ""

        positions = {}
        for section in expected_order:
            match = search(rf"{section}", docstring)
            if match:
                positions[section] = match.start()

        sections_found = sorted(positions.keys(), key=lambda k: positions[k])
        expected_sections = [s for s in expected_order if s in positions]

        if sections_found != expected_sections:
            failures.append(
                f"{operation.__qualname__} has incorrect section order: "
                f"found {sections_found}, expected {expected_sections}"
            )

    if failures:
        fail_msg = "The following operations have docstring sections in the wrong order:\n"
        fail_msg += "\n".join(failures)
        fail(fail_msg)
