from typing import Any, Optional


class QcmapError(ValueError):
    """Base error; `exit_code` is what the command layer returns to the shell."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.details: dict[str, Any] = dict(details or {})


class ParseError(QcmapError):
    exit_code = 2


class InputError(QcmapError):
    exit_code = 2


class ConfigError(QcmapError):
    exit_code = 2


class EmptyRegion(QcmapError):
    exit_code = 2


class InvalidWeights(QcmapError):
    exit_code = 2


class ShapeMismatch(QcmapError):
    exit_code = 2


class MismatchedSystem(QcmapError):
    exit_code = 2


class ValidationError(QcmapError):
    exit_code = 3

    def __init__(self, message: str, violations: Optional[list[str]] = None):
        self.violations = list(violations or [])
        super().__init__(message, {"violations": self.violations})


class MuOutOfRange(QcmapError):
    exit_code = 4

    def __init__(self, message: str, faces: Optional[list[int]] = None):
        self.faces = list(faces or [])
        super().__init__(message, {"faces": self.faces[:50]})


class DuplicatePins(QcmapError):
    exit_code = 4


class ConnectivityMismatch(QcmapError):
    exit_code = 5


class SolverFailure(QcmapError):
    exit_code = 1


class ConvergenceFailure(QcmapError):
    exit_code = 1


class NonFiniteGradient(QcmapError):
    exit_code = 1


class PropertyFailure(QcmapError):
    exit_code = 1
