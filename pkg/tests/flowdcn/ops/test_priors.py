# tests/flowdcn/ops/test_priors.py

# Third party imports
import numpy as np
from pytest import mark
from pytest import raises

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.ops.priors import direction_prior
from flowdcn.ops.priors import init_scale_priors
from flowdcn.ops.priors import random_direction_prior
from flowdcn.ops.priors import random_scale_priors
from flowdcn.tensor.primitives import stable_sigmoid


class TestScalePriors:
    def test_four_groups(self):
        """Test G=4 gives sigmoid(s0) = [0.2, 0.4, 0.6, 0.8]"""
        s0 = init_scale_priors(4)
        np.testing.assert_allclose(s0, [-1.3862944, -0.4054651, 0.4054651, 1.3862944], atol=1e-7)
        np.testing.assert_allclose(stable_sigmoid(s0), [0.2, 0.4, 0.6, 0.8], atol=1e-12)

    def test_one_group(self):
        """Test G=1 gives a single zero logit"""
        s0 = init_scale_priors(1)
        assert s0.shape == (1,)
        assert stable_sigmoid(s0)[0] == 0.5

    @mark.parametrize("groups", range(1, 17))
    def test_linear_spacing(self, groups):
        """Test consecutive sigmoid(s0) differ by exactly 1/(G+1) and stay inside (0, 1)"""
        s = stable_sigmoid(init_scale_priors(groups))
        assert s.shape == (groups,)
        assert np.all(np.isfinite(s))
        assert np.all((s > 0.0) & (s < 1.0))
        np.testing.assert_allclose(np.diff(s), 1.0 / (groups + 1), atol=1e-12)

    def test_zero_groups(self):
        """Test G=0 is an argument error"""
        with raises(ArgumentException) as exc_info:
            init_scale_priors(0)
        assert exc_info.value.field_name == "groups"


class TestDirectionPrior:
    def test_nine_points_is_integer_grid(self):
        """Test K=9 gives {-1, 0, 1}^2 in row-major order"""
        grid = direction_prior(9)
        expected = [(h, w) for h in (-1.0, 0.0, 1.0) for w in (-1.0, 0.0, 1.0)]
        np.testing.assert_array_equal(grid, expected)

    def test_single_point(self):
        """Test K=1 is the center"""
        np.testing.assert_array_equal(direction_prior(1), [[0.0, 0.0]])

    def test_four_points_centered(self):
        """Test K=4 is the centered half-integer 2x2 grid"""
        grid = direction_prior(4)
        np.testing.assert_array_equal(grid, [[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])

    @mark.parametrize("points", [2, 5, 8, 12, 20])
    def test_non_square_rings(self, points):
        """Test non-square K starts at the center and has K distinct points"""
        grid = direction_prior(points)
        assert grid.shape == (points, 2)
        np.testing.assert_array_equal(grid[0], [0.0, 0.0])
        assert len({tuple(row) for row in grid}) == points

    def test_full_first_ring(self):
        """Test K=17 holds the center, the 8-point ring and part of the 16-point ring"""
        grid = direction_prior(17)
        chebyshev = np.max(np.abs(grid), axis=1)
        assert np.count_nonzero(chebyshev == 1.0) == 8
        assert np.count_nonzero(chebyshev == 2.0) == 8

    def test_zero_points(self):
        """Test K=0 is an argument error"""
        with raises(ArgumentException):
            direction_prior(0)


class TestRandomPriors:
    def test_random_priors(self, rng):
        """Test random priors have the right shapes and ranges"""
        directions = random_direction_prior(rng, 9)
        assert directions.shape == (9, 2)
        assert np.all(np.abs(directions) <= 1.0)
        assert random_scale_priors(rng, 5).shape == (5,)

    def test_random_priors_reject_zero(self, rng):
        """Test zero groups or points are rejected"""
        with raises(ArgumentException):
            random_direction_prior(rng, 0)
        with raises(ArgumentException):
            random_scale_priors(rng, 0)
