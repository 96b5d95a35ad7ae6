# tests/conftest.py

# Standard library imports
from typing import Callable
from typing import Union

# Third party imports
import numpy as np
from pytest import fixture

# Local imports
from flowdcn.model.config import ModelConfig
from flowdcn.model.network import FlowDCN
from flowdcn.ops.msdcn import MsDcnParams
from flowdcn.ops.msdcn import random_msdcn_params
from flowdcn.utils.helpers import rng_stream


@fixture
def rng():
    """Fixture to provide a seeded generator"""
    return rng_stream(1234, "tests")


@fixture
def tiny_config_factory():
    """Fixture to build small ModelConfigs; keyword arguments override the defaults"""

    def _make(**overrides) -> ModelConfig:
        base = dict(
            layers=1,
            hidden=8,
            groups=2,
            points=9,
            patch=1,
            num_classes=3,
            in_channels=2,
            train_resolution=(4, 4),
        )
        base.update(overrides)
        return ModelConfig(**base)

    return _make


@fixture
def tiny_model_factory(tiny_config_factory):
    """Fixture to build a small FlowDCN with a fixed seed"""

    def _make(seed: int = 0, **overrides) -> FlowDCN:
        return FlowDCN(tiny_config_factory(**overrides), seed=seed)

    return _make


@fixture
def msdcn_params_factory():
    """Fixture to build deformable-layer parameters with every projection random"""

    def _make(channels: int = 4, groups: int = 2, points: int = 9, seed: int = 0, **flags):
        rng = rng_stream(seed, "msdcn-fixture")
        return random_msdcn_params(rng, channels, groups, points, **flags)

    return _make


@fixture
def oracle_velocity_factory():
    """Fixture to build the exact velocity field of a single-datapoint distribution.

    For data concentrated at x*, the straight-path velocity is (x* - x) / (1 - t).
    The factory also counts calls and records the labels it was called with.
    """

    def _make(x_star: np.ndarray) -> Callable:
        def velocity(
            x: np.ndarray, t: Union[float, np.ndarray], labels, adjust=(1.0, 1.0)
        ) -> np.ndarray:
            velocity.calls += 1
            velocity.labels.append(labels)
            return (x_star - x) / (1.0 - t)

        velocity.calls = 0
        velocity.labels = []
        return velocity

    return _make


@fixture
def zero_velocity():
    """Fixture to provide a model that predicts zero velocity everywhere"""

    def velocity(x, t, labels, adjust=(1.0, 1.0)):
        return np.zeros_like(x)

    return velocity


@fixture
def label_velocity():
    """Fixture to provide a model whose velocity is the label id (null = -1)"""

    def _make(null_label: int) -> Callable:
        def velocity(x, t, labels, adjust=(1.0, 1.0)):
            value = -1.0 if labels == null_label else float(labels)
            return np.full_like(x, value)

        return velocity

    return _make


@fixture
def msdcn_small(msdcn_params_factory) -> MsDcnParams:
    """Fixture to provide a random 4-channel, 2-group, 9-point layer"""
    return msdcn_params_factory()
