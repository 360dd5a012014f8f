"""Exception hierarchy shared by every FPS module."""
from typing import Optional


class FPSError(Exception):
    """Base exception for all FPS pipeline errors."""

    pass


class InvalidInputError(FPSError):
    """Input values violate a documented precondition."""

    pass


class ShapeError(FPSError):
    """Array or feature-map dimensions are incompatible."""

    pass


class BoundsError(FPSError):
    """Index outside the valid range."""

    pass


class FormatError(FPSError):
    """Malformed FPSD file or dataset manifest."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class IdentifiabilityError(FPSError):
    """Echo scheme cannot separate T2 and ADC."""

    pass


class DivergenceError(FPSError):
    """A training loss term became non-finite."""

    def __init__(self, term: str, value: float):
        super().__init__(f"Loss term '{term}' is not finite ({value})")
        self.term = term
        self.value = value


class StateError(FPSError):
    """Teacher/student state or checkpoint manifest is inconsistent."""

    pass


class MetricUndefinedError(FPSError):
    """Reference map has no dynamic range."""

    pass


class RegressionUndefinedError(FPSError):
    """Regression requested on samples without variance."""

    pass


class UndefinedFeatureError(FPSError):
    """Histogram feature cannot be computed."""

    pass


class SchemeError(FPSError):
    """Gradient scheme cannot determine a diffusion tensor."""

    pass


class ConfigError(FPSError):
    """Experiment configuration text is invalid."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        location = []
        if key:
            location.append(f"key '{key}'")
        if line is not None:
            location.append(f"line {line}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.key = key
        self.line = line


class FPSDIOError(FPSError):
    """Reading or writing an FPSD file failed at the filesystem level."""

    pass


class GradientCheckError(FPSError):
    """Analytic or numeric gradient is not finite."""

    def __init__(self, tensor: str, message: str = "non-finite gradient"):
        super().__init__(f"{message} for tensor '{tensor}'")
        self.tensor = tensor
