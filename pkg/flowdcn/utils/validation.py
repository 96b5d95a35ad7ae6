# flowdcn/utils/validation.py

# Standard library imports
from functools import wraps
from inspect import signature
from numbers import Real
from typing import Callable
from typing import Optional
from typing import ParamSpec
from typing import Sequence
from typing import TypeVar
from typing import cast

# Third party imports
import numpy as np

# Local imports
from flowdcn.exceptions import ArgumentException
from flowdcn.exceptions import NumericException
from flowdcn.exceptions import ShapeException

# Type variables for decorator typing
P = ParamSpec("P")
R = TypeVar("R")


def validate_positive(value: Optional[Real], field_name: str) -> None:
    """
    Validates that a scalar is strictly positive. None is accepted and ignored.

    Args:
        value: Value to check
        field_name: Name of the argument for error messages

    Raises:
        ArgumentException: If value <= 0 or not finite
    """
    if value is None:
        return
    if not np.isfinite(float(value)) or value <= 0:
        raise ArgumentException(f"{field_name} must be positive, got {value}", field_name)


def validate_non_negative(value: Optional[Real], field_name: str) -> None:
    """
    Validates that a scalar is zero or positive. None is accepted and ignored.

    Args:
        value: Value to check
        field_name: Name of the argument for error messages

    Raises:
        ArgumentException: If value < 0 or not finite
    """
    if value is None:
        return
    if not np.isfinite(float(value)) or value < 0:
        raise ArgumentException(f"{field_name} must be non-negative, got {value}", field_name)


def _checked_by(
    check: Callable[[Optional[Real], str], None], field_names: Sequence[str]
) -> Callable[[Callable[P, R]], Callable[P, R]]:
    def decorator(func: Callable[P, R]) -> Callable[P, R]:
        sig = signature(func)

        @wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
            bound_args = sig.bind(*args, **kwargs)
            bound_args.apply_defaults()
            for name in field_names:
                check(bound_args.arguments.get(name), name)
            return func(*args, **kwargs)

        return cast(Callable[P, R], wrapper)

    return decorator


def validate_positive_params(*field_names: str) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """
    Decorator to validate that the named parameters are strictly positive.

    Args:
        *field_names: Names of parameters in the decorated function

    Example:
        ```python
        @validate_positive_params("height", "width")
        def flops_count(height: int, width: int, ...):
            ...
        ```
    """
    return _checked_by(validate_positive, field_names)


def validate_non_negative_params(*field_names: str) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """
    Decorator to validate that the named parameters are zero or positive.

    Args:
        *field_names: Names of parameters in the decorated function
    """
    return _checked_by(validate_non_negative, field_names)


def check_finite(array: np.ndarray, op_name: str) -> None:
    """
    Raise if an array holds NaN or Inf.

    Args:
        array: Array produced by an operation
        op_name: Operation name for the error message

    Raises:
        NumericException: If any element is not finite
    """
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericException(f"{op_name} produced {bad} non-finite values", op_name)


def check_same_shape(a: np.ndarray, b: np.ndarray, field_name: str) -> None:
    """
    Raise ShapeException unless both arrays share a shape.

    Args:
        a: First array
        b: Second array
        field_name: Name reported on mismatch
    """
    if a.shape != b.shape:
        raise ShapeException("Shape mismatch", field_name, expected=a.shape, actual=b.shape)


def check_last_dim(x: np.ndarray, expected: int, field_name: str) -> None:
    """
    Raise ShapeException unless the last axis of x has the expected extent.

    Args:
        x: Input array
        expected: Required extent of the last axis
        field_name: Name reported on mismatch
    """
    if x.ndim == 0 or x.shape[-1] != expected:
        raise ShapeException(
            "Last-axis dimension mismatch",
            field_name,
            expected=(expected,),
            actual=tuple(x.shape[-1:]),
        )
