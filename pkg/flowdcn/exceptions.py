# flowdcn/exceptions.py

# Standard library imports
from typing import List
from typing import Optional


class FlowDCNException(Exception):
    """Base exception for all runtime failures inside flowdcn"""

    def __init__(self, message: str, error_type: str, field_name: Optional[str] = None):
        self.message = message
        self.error_type = error_type
        self.field_name = field_name
        super().__init__(self.message)


## Runtime Exceptions


class NumericException(FlowDCNException):
    """Raised when a computation produces NaN or Inf"""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message=message, error_type="numeric", field_name=field_name)


class StateException(FlowDCNException):
    """Raised when saved forward intermediates or training state are missing"""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message=message, error_type="state", field_name=field_name)


class DomainException(FlowDCNException):
    """Raised when a conversion is evaluated outside its domain (e.g. score at t near 1)"""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message=message, error_type="domain", field_name=field_name)


class CheckpointException(FlowDCNException):
    """Raised when a checkpoint file is malformed or cannot be read"""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message=message, error_type="checkpoint", field_name=field_name)


class ChecksumException(CheckpointException):
    """Raised when the checkpoint payload checksum does not match the stored one.

    Attributes:
        expected: Checksum stored in the file
        actual: Checksum computed over the payload
    """

    def __init__(self, expected: int, actual: int):
        super().__init__(
            message=(
                f"Checkpoint checksum mismatch: stored {expected:#018x}, computed {actual:#018x};"
                " refusing to load"
            ),
            field_name="checksum",
        )
        self.expected = expected
        self.actual = actual


class TimerResolutionException(FlowDCNException):
    """Raised when a benchmark cannot time a case above the clock resolution"""

    def __init__(self, message: str, iters: Optional[int] = None):
        super().__init__(message=message, error_type="timer_resolution", field_name="iters")
        self.iters = iters


## Validation Exceptions


class ValidationException(ValueError):
    """Superclass for validations that take place before any computation.

    These exceptions indicate that arguments, shapes or configuration were rejected
    locally, before any array work was done."""

    def __init__(self, message: str, field_name: Optional[str] = None):
        """Initialize validation exception.

        Args:
            message: Human-readable error message
            field_name: Optional name of the invalid field
        """
        self.message = message
        self.field_name = field_name
        super().__init__(self.message)


class ShapeException(ValidationException):
    """Raised when array shapes or dimensions are inconsistent"""

    def __init__(
        self,
        message: str,
        field_name: Optional[str] = None,
        expected: Optional[tuple] = None,
        actual: Optional[tuple] = None,
    ):
        """Initialize shape exception.

        Args:
            message: Error message describing the mismatch
            field_name: Optional name of the offending argument
            expected: Optional expected shape
            actual: Optional shape that was received
        """
        error_msg = message
        if expected is not None and actual is not None:
            error_msg = f"{message}: expected {expected}, got {actual}"
        super().__init__(message=error_msg, field_name=field_name)
        self.expected = expected
        self.actual = actual


class ResolutionException(ShapeException):
    """Raised when an image resolution is not divisible by the patch size"""

    def __init__(self, height: int, width: int, patch: int):
        """Initialize resolution exception.

        Args:
            height: Requested image height
            width: Requested image width
            patch: Patch size the model was built with
        """
        super().__init__(
            message=(
                f"Resolution {height}x{width} is not divisible by the model patch size {patch}"
            ),
            field_name="resolution",
        )
        self.height = height
        self.width = width
        self.patch = patch


class ArgumentException(ValidationException):
    """Raised when a scalar argument is out of its admissible range"""

    def __init__(
        self, message: str, field_name: Optional[str] = None, allowed: Optional[List[str]] = None
    ):
        """Initialize argument exception.

        Args:
            message: Error message
            field_name: Name of the invalid argument
            allowed: Optional list of admissible values
        """
        error_msg = message
        if allowed:
            error_msg = f"{message}. Allowed values: {', '.join(sorted(allowed))}"
        super().__init__(message=error_msg, field_name=field_name)
        self.allowed = allowed


class ConfigException(ValidationException):
    """Raised when a model or layer configuration is inconsistent (e.g. D % G != 0)"""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message=message, field_name=field_name)


class RunConfigException(ValidationException):
    """Raised when a run configuration file has unknown or malformed keys.

    Every problem found in the file is reported at once.

    Attributes:
        bad_keys: Mapping of key (or line reference) to the reason it was rejected
    """

    def __init__(self, bad_keys: "dict[str, str]", source: Optional[str] = None):
        """Initialize run config exception

        Args:
            bad_keys: Mapping of offending key to reason
            source: Optional path of the file being parsed
        """
        where = f" in {source}" if source else ""
        details = "; ".join(f"{key}: {reason}" for key, reason in bad_keys.items())
        super().__init__(
            message=f"Invalid run configuration{where} ({len(bad_keys)} bad keys): {details}",
            field_name="run_config",
        )
        self.bad_keys = bad_keys
        self.source = source
