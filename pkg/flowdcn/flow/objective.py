# flowdcn/flow/objective.py

"""
Linear flow-matching objective.

x_t = t * x + (1 - t) * eps, with target velocity v = x - eps. The network regresses
v with a mean squared error over all elements.
"""

# Standard library imports
from dataclasses import dataclass
from typing import Union

# Third party imports
import numpy as np

# Local imports
from flowdcn._constants import T_MAX_GAP
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import ShapeException
from flowdcn.utils.helpers import rng_stream
from flowdcn.utils.validation import check_same_shape

TimeLike = Union[float, np.ndarray]


def _broadcast_time(t: TimeLike, like: np.ndarray) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 0:
        return t_arr
    if t_arr.shape != like.shape[:1]:
        raise ShapeException(
            "Per-sample times must match the batch axis",
            "t",
            expected=like.shape[:1],
            actual=t_arr.shape,
        )
    return t_arr.reshape((-1,) + (1,) * (like.ndim - 1))


def interpolate(x: np.ndarray, eps: np.ndarray, t: TimeLike) -> np.ndarray:
    """
    Point on the straight path from noise to data.

    Args:
        x: Data
        eps: Noise, same shape as x
        t: Scalar or per-sample times [B] in [0, 1]

    Returns:
        x_t = t * x + (1 - t) * eps
    """
    check_same_shape(x, eps, "eps")
    tb = _broadcast_time(t, x)
    return tb * x + (1.0 - tb) * eps


def target_velocity(x: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """
    Constant velocity of the straight path: v = x - eps.

    Args:
        x: Data
        eps: Noise, same shape as x

    Returns:
        Target velocity
    """
    check_same_shape(x, eps, "eps")
    return x - eps


def fm_loss(v_pred: np.ndarray, v_target: np.ndarray) -> float:
    """Mean squared error over every element."""
    check_same_shape(v_pred, v_target, "v_target")
    diff = v_pred - v_target
    return float(np.mean(diff * diff))


def fm_loss_backward(v_pred: np.ndarray, v_target: np.ndarray) -> np.ndarray:
    """d(fm_loss)/d(v_pred)."""
    check_same_shape(v_pred, v_target, "v_target")
    return 2.0 * (v_pred - v_target) / v_pred.size


@dataclass(frozen=True)
class FlowBatch:
    """One training batch.

    Attributes:
        x: Data [B, H, W, C]
        eps: Standard normal noise, same shape
        t: Times [B] in [0, 1)
        labels: Class ids [B] after label dropout
    """

    x: np.ndarray
    eps: np.ndarray
    t: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        check_same_shape(self.x, self.eps, "eps")
        if self.t.shape != self.x.shape[:1] or self.labels.shape != self.x.shape[:1]:
            raise ShapeException(
                "Batch times and labels must be [B]",
                "t",
                expected=self.x.shape[:1],
                actual=(self.t.shape, self.labels.shape),
            )
        if np.any(self.t < 0) or np.any(self.t >= 1):
            raise ArgumentException("Batch times must lie in [0, 1)", "t")


def make_batch(
    x: np.ndarray,
    labels: np.ndarray,
    seed: int,
    step: int,
    null_label: int,
    class_dropout: float = 0.1,
) -> FlowBatch:
    """
    Draw noise, times and label dropout for one step.

    All draws come from the (seed, "batch", step) stream, so a step's batch is the
    same no matter how it is scheduled.

    Args:
        x: Data batch [B, H, W, C]
        labels: Class ids [B]
        seed: Run seed
        step: Step index
        null_label: Id substituted for dropped labels
        class_dropout: Probability of replacing a label with the null label

    Returns:
        FlowBatch
    """
    if not 0.0 <= class_dropout <= 1.0:
        raise ArgumentException(
            f"class_dropout must be in [0, 1], got {class_dropout}", "class_dropout"
        )
    rng = rng_stream(seed, "batch", step)
    batch = x.shape[0]
    eps = rng.standard_normal(x.shape)
    t = rng.uniform(0.0, 1.0 - T_MAX_GAP, size=batch)
    dropped = rng.uniform(size=batch) < class_dropout
    return FlowBatch(
        x=x,
        eps=eps,
        t=t,
        labels=np.where(dropped, null_label, labels).astype(np.int64),
    )
