"""Exceptions and input validation for the star-network toolkit.

Every public operation validates its inputs here before any numerics run, so
errors name the offending field instead of surfacing as NaNs downstream.
"""

import math
from typing import Any, Dict, Iterable, Optional, Tuple

from pydantic import ValidationError


class ToolkitError(Exception):
    """Base class of every error raised by the toolkit"""
    exit_code = 3


class ValidationException(ToolkitError):
    """Invalid argument or configuration document"""
    exit_code = 2


class NotErgodicError(ToolkitError):
    """A stationary regime is required but the network is not ergodic"""

    def __init__(self, message: str, overloaded: Optional[Iterable[int]] = None):
        super().__init__(message)
        self.overloaded = tuple(overloaded or ())


class ModeMismatchError(ToolkitError):
    """Ergodic-mode rate requested on a non-ergodic network"""


class InsufficientDataError(ToolkitError):
    """Too few histogram bins for a decay-rate regression"""


class AbsoluteContinuityError(ToolkitError):
    """A simulated jump has no likelihood ratio under the reference law"""

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class ConvergenceError(ToolkitError):
    """An iterative solver produced nothing usable"""


class NetworkValidator:
    """Validates numeric arguments of rate and simulation operations"""

    @staticmethod
    def validate_nonnegative(value: float, field: str) -> float:
        value = float(value)
        if math.isnan(value):
            raise ValidationException(f"{field}: must be a number, got NaN")
        if value < 0:
            raise ValidationException(f"{field}: must be >= 0, got {value}")
        return value

    @staticmethod
    def validate_positive(value: float, field: str) -> float:
        value = float(value)
        if not math.isfinite(value) or value <= 0:
            raise ValidationException(f"{field}: must be a finite number > 0, got {value}")
        return value

    @staticmethod
    def validate_finite(value: float, field: str) -> float:
        value = float(value)
        if not math.isfinite(value):
            raise ValidationException(f"{field}: must be finite, got {value}")
        return value

    @staticmethod
    def validate_window(window: Tuple[float, float]) -> Tuple[float, float]:
        """Validate a quantile pair used by the decay regression"""
        if len(window) != 2:
            raise ValidationException("window: expected a pair (low, high)")
        low, high = float(window[0]), float(window[1])
        if not 0.0 <= low < high <= 1.0:
            raise ValidationException(
                f"window: need 0 <= low < high <= 1, got ({low}, {high})"
            )
        return low, high


class SchemaValidator:
    """Validates data against Pydantic schemas"""

    @staticmethod
    def format_errors(error: ValidationError) -> str:
        messages = []
        for item in error.errors():
            field = " -> ".join(str(loc) for loc in item["loc"]) or "<root>"
            messages.append(f"{field}: {item['msg']}")
        return "\n".join(messages)

    @staticmethod
    def validate_against_schema(data: Dict[str, Any], schema_class) -> Any:
        """
        Validate data against a Pydantic model

        Args:
            data: Dictionary to validate
            schema_class: Pydantic model class

        Returns:
            Validated instance of the schema

        Raises:
            ValidationException: If validation fails
        """
        try:
            return schema_class.model_validate(data)
        except ValidationError as e:
            raise ValidationException(
                "Schema validation failed:\n" + SchemaValidator.format_errors(e)
            )
