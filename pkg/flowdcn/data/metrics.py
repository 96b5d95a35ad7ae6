# flowdcn/data/metrics.py

"""
Distribution metrics for generated samples: an RBF-kernel MMD two-sample statistic,
first/second moment discrepancies, and quadrant accuracy for shapes16.
"""

# Standard library imports
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

# Third party imports
import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.distance import pdist

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ShapeException
from flowdcn.utils.validation import check_same_shape


def _as_rows(samples: np.ndarray, name: str) -> np.ndarray:
    rows = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if rows.shape[0] < 2:
        raise ArgumentException(
            f"MMD needs at least 2 samples per set, got {rows.shape[0]}", name
        )
    return rows


def median_bandwidths(a: np.ndarray, b: np.ndarray) -> List[float]:
    """
    Median-heuristic bandwidths {0.5m, m, 2m}, m the median pairwise distance of A ∪ B.

    Falls back to m = 1 when every point coincides.
    """
    pooled = np.concatenate([_as_rows(a, "a"), _as_rows(b, "b")], axis=0)
    median = float(np.median(pdist(pooled)))
    if median <= 0.0:
        median = 1.0
    return [0.5 * median, median, 2.0 * median]


def _kernel(sq_dist: np.ndarray, bandwidths: Sequence[float]) -> np.ndarray:
    out = np.zeros_like(sq_dist)
    for h in bandwidths:
        out += np.exp(-sq_dist / (2.0 * h * h))
    return out


def mmd_rbf(
    a: np.ndarray, b: np.ndarray, bandwidths: Optional[Sequence[float]] = None, clip: bool = True
) -> float:
    """
    Unbiased MMD² estimate with a sum of RBF kernels.

    Args:
        a: Sample set [n, ...]
        b: Sample set [m, ...], same per-sample shape
        bandwidths: Kernel bandwidths; median heuristic when None
        clip: Clip the estimate at 0

    Returns:
        MMD² (>= 0 when clipped)

    Raises:
        ArgumentException: If either set has fewer than 2 samples
        ShapeException: If the sets differ in dimensionality
    """
    x = _as_rows(a, "a")
    y = _as_rows(b, "b")
    if x.shape[1] != y.shape[1]:
        raise ShapeException(
            "Sample sets differ in dimensionality", "b", x.shape[1:], y.shape[1:]
        )
    if bandwidths is None:
        bandwidths = median_bandwidths(x, y)
    if any(h <= 0 for h in bandwidths):
        raise ArgumentException(
            f"Bandwidths must be positive, got {list(bandwidths)}", "bandwidths"
        )
    n, m = x.shape[0], y.shape[0]
    kxx = _kernel(cdist(x, x, "sqeuclidean"), bandwidths)
    kyy = _kernel(cdist(y, y, "sqeuclidean"), bandwidths)
    kxy = _kernel(cdist(x, y, "sqeuclidean"), bandwidths)
    term_xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    estimate = float(term_xx + term_yy - 2.0 * kxy.mean())
    return max(estimate, 0.0) if clip else estimate


def quadrant_accuracy(images: np.ndarray, labels: np.ndarray) -> float:
    """
    Fraction of images whose brightest quadrant (by mean) equals the label.

    Quadrants follow shapes16: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    """
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise ShapeException(
            "Expected images [N, H, W, C] and labels [N]", "labels", images.shape[:1], labels.shape
        )
    h2, w2 = images.shape[1] // 2, images.shape[2] // 2
    means = np.stack(
        [
            images[:, :h2, :w2].mean(axis=(1, 2, 3)),
            images[:, :h2, w2:].mean(axis=(1, 2, 3)),
            images[:, h2:, :w2].mean(axis=(1, 2, 3)),
            images[:, h2:, w2:].mean(axis=(1, 2, 3)),
        ],
        axis=1,
    )
    return float(np.mean(np.argmax(means, axis=1) == labels))


@dataclass
class MetricReport:
    """Sample-quality report.

    Attributes:
        mmd_rbf: MMD² between samples and reference
        mean_err: Per-channel |mean difference|
        cov_err: Frobenius norm of the channel covariance difference
        per_class: Per-class Euclidean norm of the mean difference, when labeled
        baseline_mmd: MMD² between two independent data draws, when computed
        extra: Additional named scalars (e.g. quadrant_accuracy)
    """

    mmd_rbf: float
    mean_err: np.ndarray
    cov_err: float
    per_class: Dict[int, float] = field(default_factory=dict)
    baseline_mmd: Optional[float] = None
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def mmd_ratio(self) -> Optional[float]:
        if self.baseline_mmd is None or self.baseline_mmd <= 0.0:
            return None
        return self.mmd_rbf / self.baseline_mmd

    def to_lines(self) -> List[str]:
        """`key value` lines in a fixed order."""
        lines = [f"mmd_rbf {self.mmd_rbf:.10e}"]
        lines += [f"mean_err.{c} {v:.10e}" for c, v in enumerate(self.mean_err)]
        lines.append(f"cov_err {self.cov_err:.10e}")
        if self.baseline_mmd is not None:
            lines.append(f"baseline_mmd {self.baseline_mmd:.10e}")
        if self.mmd_ratio is not None:
            lines.append(f"mmd_ratio {self.mmd_ratio:.6f}")
        lines += [f"class.{c}.mean_err {v:.10e}" for c, v in sorted(self.per_class.items())]
        lines += [f"{k} {v:.6f}" for k, v in sorted(self.extra.items())]
        return lines

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")


def _channel_rows(samples: np.ndarray) -> np.ndarray:
    return np.asarray(samples, dtype=np.float64).reshape(-1, samples.shape[-1])


def moment_report(
    samples: np.ndarray,
    reference: np.ndarray,
    sample_labels: Optional[np.ndarray] = None,
    reference_labels: Optional[np.ndarray] = None,
    with_mmd: bool = True,
) -> MetricReport:
    """
    Compare generated samples with reference data.

    Means and covariances are taken over channels with every pixel of every sample
    pooled. The MMD term treats each sample as one flattened vector.

    Args:
        samples: Generated samples [N, H, W, C]
        reference: Reference data, same shape
        sample_labels: Optional class ids for samples
        reference_labels: Optional class ids for reference
        with_mmd: Compute the MMD term (needs N >= 2)

    Returns:
        MetricReport
    """
    check_same_shape(samples, reference, "reference")
    s_rows = _channel_rows(samples)
    r_rows = _channel_rows(reference)
    mean_err = np.abs(s_rows.mean(axis=0) - r_rows.mean(axis=0))
    if s_rows.shape[0] > 1:
        cov_diff = np.atleast_2d(np.cov(s_rows, rowvar=False) - np.cov(r_rows, rowvar=False))
        cov_err = float(np.linalg.norm(cov_diff, "fro"))
    else:
        cov_err = 0.0
    per_class: Dict[int, float] = {}
    if sample_labels is not None and reference_labels is not None:
        for c in sorted(set(sample_labels.tolist()) & set(reference_labels.tolist())):
            s_mean = _channel_rows(samples[sample_labels == c]).mean(axis=0)
            r_mean = _channel_rows(reference[reference_labels == c]).mean(axis=0)
            per_class[int(c)] = float(np.linalg.norm(s_mean - r_mean))
    mmd = mmd_rbf(samples, reference) if with_mmd else 0.0
    return MetricReport(mmd_rbf=mmd, mean_err=mean_err, cov_err=cov_err, per_class=per_class)
