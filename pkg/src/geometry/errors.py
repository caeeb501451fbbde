from __future__ import annotations

from typing import Any, Optional


class FaceFlatError(ValueError):
    """Base class for every domain error raised by the flattening pipeline."""


class ParseError(FaceFlatError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TopologyError(FaceFlatError):
    def __init__(self, message: str, element: Any = None) -> None:
        self.element = element
        super().__init__(message)


class DegenerateFaceError(FaceFlatError):
    def __init__(self, message: str, face: Optional[int] = None) -> None:
        self.face = face
        super().__init__(message)


class ZeroNormalError(FaceFlatError):
    def __init__(self, message: str, vertex: Optional[int] = None) -> None:
        self.vertex = vertex
        super().__init__(message)


class MaxItersExceeded(FaceFlatError):
    """Raised when the flow stops on its iteration budget; carries the partial run."""

    def __init__(self, message: str, metric: Any = None, report: Any = None) -> None:
        self.metric = metric
        self.report = report
        super().__init__(message)


class MetricCollapseError(FaceFlatError):
    pass


class LayoutError(FaceFlatError):
    def __init__(self, message: str, face: Optional[int] = None) -> None:
        self.face = face
        super().__init__(message)


class NonConvergedMetricError(FaceFlatError):
    pass


class DegenerateConfigurationError(FaceFlatError):
    pass


class DimensionMismatchError(FaceFlatError):
    pass


class EmptyFootprintError(FaceFlatError):
    pass


class FormatError(FaceFlatError):
    pass


class ConfigError(FaceFlatError):
    pass
