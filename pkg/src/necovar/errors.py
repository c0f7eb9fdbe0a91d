"""Exception types raised across the package."""


class NecoVarError(Exception):
    """Base class for all package errors."""


class PanelFormatError(NecoVarError):
    """Malformed input panel: missing cells, bad dates, non-numeric values."""


class DuplicateLabel(NecoVarError):
    """Two columns share the same instrument label."""


class InsufficientData(NecoVarError):
    """Not enough observations for the requested computation."""


class DegenerateSeries(NecoVarError):
    """A series has zero variance where dispersion is required."""


class WindowError(NecoVarError):
    """Infeasible train/test window geometry."""


class InvalidSample(NecoVarError):
    """Sample contains non-finite values or is otherwise unusable."""


class DomainError(NecoVarError):
    """Argument outside the mathematical domain of the function."""


class NumericalError(NecoVarError):
    """Singular or numerically unstable linear-algebra step."""


class FitError(NecoVarError):
    """Iterative estimation failed to converge."""


class InvalidInit(NecoVarError):
    """Starting values violate the model's parameter constraints."""


class CalibrationError(NecoVarError):
    """Requested calibration target is unreachable."""
