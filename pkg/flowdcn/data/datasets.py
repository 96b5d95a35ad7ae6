# flowdcn/data/datasets.py

"""
Seeded desk-scale datasets. Every sample is a [H, W, C] map with values in [-1, 1],
so 2-D point sets and images go through the same model and trainer.
"""

# Standard library imports
from logging import getLogger
from typing import Tuple

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import DatasetKind
from flowdcn.exceptions import ArgumentException
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.types import Resolution

GAUSS8_SIGMA = 0.1
GAUSS8_SCALE = 1.5
SHAPES_BACKGROUND = -0.8
SHAPES_NOISE = 0.1
SHAPES_SQUARE = 6


def gauss8(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """8 Gaussians (sigma 0.1) on the unit circle, scaled by 1/1.5; label = component."""
    component = rng.integers(0, 8, size=n)
    angle = 2.0 * np.pi * component / 8.0
    centers = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
    points = (centers + GAUSS8_SIGMA * rng.standard_normal((n, 2))) / GAUSS8_SCALE
    return np.clip(points, -1.0, 1.0).reshape(n, 1, 1, 2), component.astype(np.int64)


def checkerboard(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform over the 8 dark cells of a 4x4 board on [-1, 1]^2; one class."""
    dark = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
    cells = np.asarray(dark)[rng.integers(0, len(dark), size=n)]
    points = -1.0 + 0.5 * (cells + rng.uniform(0.0, 1.0, size=(n, 2)))
    return points.reshape(n, 1, 1, 2), np.zeros(n, dtype=np.int64)


def shapes16(
    rng: np.random.Generator, n: int, resolution: Resolution = (16, 16)
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Noisy dark images with one bright 6x6 square in quadrant `label`.

    Quadrants: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right. The square
    sits at a random offset of 0..2 pixels inside its quadrant.
    """
    height, width = resolution
    if height < 2 * (SHAPES_SQUARE + 2) or width < 2 * (SHAPES_SQUARE + 2):
        raise ArgumentException(
            f"shapes16 needs at least 16x16 images, got {resolution}", "resolution"
        )
    labels = rng.integers(0, 4, size=n)
    images = SHAPES_BACKGROUND + SHAPES_NOISE * rng.standard_normal((n, height, width, 1))
    images = np.clip(images, -1.0, 1.0)
    offsets = rng.integers(0, 3, size=(n, 2))
    for i, c in enumerate(labels):
        top = (0 if c in (0, 1) else height // 2) + offsets[i, 0]
        left = (0 if c in (0, 2) else width // 2) + offsets[i, 1]
        images[i, top : top + SHAPES_SQUARE, left : left + SHAPES_SQUARE, 0] = 1.0
    return images, labels.astype(np.int64)


class ToyDataset:
    """
    A generated dataset held in memory.

    Attributes:
        kind: Which generator
        size: Number of samples
        seed: Generation seed
        split: Stream label; different splits are independent draws
        images: [size, H, W, C]
        labels: [size]
    """

    def __init__(
        self,
        kind: DatasetKind,
        size: int,
        seed: int = 0,
        split: str = "train",
        resolution: Resolution = (16, 16),
    ):
        if size < 1:
            raise ArgumentException(f"Dataset size must be >= 1, got {size}", "size")
        try:
            self.kind = DatasetKind(kind)
        except ValueError:
            raise ArgumentException(
                f"Unknown dataset '{kind}'", "dataset", allowed=[k.value for k in DatasetKind]
            )
        self.size = size
        self.seed = seed
        self.split = split
        self.logger = getLogger(f"flowdcn.{self.__class__.__name__}")
        rng = rng_stream(seed, "dataset", self.kind.value, split)
        if self.kind == DatasetKind.GAUSS8:
            self.images, self.labels = gauss8(rng, size)
        elif self.kind == DatasetKind.CHECKERBOARD:
            self.images, self.labels = checkerboard(rng, size)
        else:
            self.images, self.labels = shapes16(rng, size, resolution)
        self.logger.debug(f"Generated {size} {self.kind.value} samples ({split}, seed={seed})")

    @property
    def num_classes(self) -> int:
        return {DatasetKind.GAUSS8: 8, DatasetKind.CHECKERBOARD: 1, DatasetKind.SHAPES16: 4}[
            self.kind
        ]

    @property
    def resolution(self) -> Resolution:
        return (int(self.images.shape[1]), int(self.images.shape[2]))

    @property
    def channels(self) -> int:
        return int(self.images.shape[3])

    def held_out(self, size: int) -> "ToyDataset":
        """An independent draw of the same distribution."""
        return ToyDataset(self.kind, size, self.seed, split="held_out", resolution=self.resolution)

    def __len__(self) -> int:
        return self.size
