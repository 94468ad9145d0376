"""Exception hierarchy shared across the package."""


class PcadError(Exception):
    """Base class for every error raised by pcad."""


class ValidationError(PcadError, ValueError):
    """Bad user input (maps to CLI exit code 2)."""


class EmptyCloud(ValidationError):
    pass


class DegenerateGeometry(PcadError):
    pass


class EmptyForeground(PcadError):
    pass


class CoincidentPoints(PcadError):
    pass


class NormalsRequired(ValidationError):
    pass


class InvalidSize(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class NonFiniteLoss(PcadError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SolverFailed(PcadError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class CalibrationDegenerate(PcadError):
    pass


class DegenerateStats(PcadError):
    pass


class NoDefects(PcadError):
    pass


class DefectTooLarge(ValidationError):
    pass


class FormatError(PcadError):
    """Corrupted or unrecognised file (bad magic, truncated payload)."""
