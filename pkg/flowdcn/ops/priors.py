# flowdcn/ops/priors.py

"""
Direction and scale priors for the multiscale deformable operator.
"""

# Standard library imports
from math import isqrt
from typing import List
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import ArgumentException


def init_scale_priors(groups: int) -> np.ndarray:
    """
    Scale-prior logits s_0[g] = log(g / (G + 1 - g)) for g = 1..G.

    sigmoid(s_0[g]) = g / (G + 1): linearly increasing across groups and never
    reaching 0 or 1, so every group gets a distinct finite receptive radius.

    Args:
        groups: Number of groups G (>= 1)

    Returns:
        Logits [G], float64

    Raises:
        ArgumentException: If groups < 1
    """
    if groups < 1:
        raise ArgumentException(f"groups must be >= 1, got {groups}", "groups")
    g = np.arange(1, groups + 1, dtype=np.float64)
    return np.log(g / (groups + 1 - g))


def _ring(radius: int) -> List[Tuple[float, float]]:
    # 8r lattice points at Chebyshev radius r, clockwise from the top-left corner
    points: List[Tuple[float, float]] = []
    for w in range(-radius, radius):
        points.append((-radius, w))
    for h in range(-radius, radius):
        points.append((h, radius))
    for w in range(radius, -radius, -1):
        points.append((radius, w))
    for h in range(radius, -radius, -1):
        points.append((h, -radius))
    return [(float(h), float(w)) for h, w in points]


def direction_prior(points: int) -> np.ndarray:
    """
    Default sampling grid p_k in feature-grid units, (dh, dw) per row.

    A perfect-square K gives the centered sqrt(K) x sqrt(K) grid in row-major order
    (K=9 is the integer grid {-1, 0, 1}^2). Any other K gives the center point
    followed by concentric square rings of 8r points; the outermost ring is only
    partly used, with its points spread evenly around it.

    Args:
        points: Number of sampling points K (>= 1)

    Returns:
        Offsets [K, 2], float64
    """
    if points < 1:
        raise ArgumentException(f"points must be >= 1, got {points}", "points")
    side = isqrt(points)
    if side * side == points:
        axis = np.arange(side, dtype=np.float64) - (side - 1) / 2.0
        hh, ww = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([hh.ravel(), ww.ravel()], axis=-1)

    grid: List[Tuple[float, float]] = [(0.0, 0.0)]
    radius = 1
    while len(grid) < points:
        ring = _ring(radius)
        remaining = points - len(grid)
        if remaining >= len(ring):
            grid.extend(ring)
        else:
            step = len(ring) / remaining
            grid.extend(ring[int(j * step)] for j in range(remaining))
        radius += 1
    return np.asarray(grid, dtype=np.float64)


def random_direction_prior(rng: np.random.Generator, points: int) -> np.ndarray:
    """Direction prior drawn from U[-1, 1]^2, the no-prior-init ablation."""
    if points < 1:
        raise ArgumentException(f"points must be >= 1, got {points}", "points")
    return rng.uniform(-1.0, 1.0, size=(points, 2))


def random_scale_priors(rng: np.random.Generator, groups: int) -> np.ndarray:
    """Scale-prior logits drawn from N(0, 1), the no-prior-init ablation."""
    if groups < 1:
        raise ArgumentException(f"groups must be >= 1, got {groups}", "groups")
    return rng.standard_normal(groups)
