"""Exception hierarchy shared by all modules."""


class SigHedgeError(Exception):
    """Base class for library errors."""

    kind = "error"


class InputError(SigHedgeError, ValueError):
    """Malformed or out-of-range input."""

    kind = "input_error"


class CapacityError(SigHedgeError, ValueError):
    """A truncation order is too small for the requested operation."""

    kind = "capacity_error"


class NumericalError(SigHedgeError, ArithmeticError):
    """A numerical procedure failed (singular system, no convergence)."""

    kind = "numerical_error"


class DataQualityError(SigHedgeError, ValueError):
    """Input data are internally inconsistent (e.g. a noisy expected signature)."""

    kind = "data_quality_error"
