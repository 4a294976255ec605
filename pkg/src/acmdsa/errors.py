class ACMDSAError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(ACMDSAError, ValueError):
    pass


class PreconditionError(ACMDSAError, ValueError):
    pass


class AssemblyError(ACMDSAError):
    pass


class SolverError(ACMDSAError):
    """Linear solve failed; ``residual`` holds the last relative residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ConstraintError(ACMDSAError):
    pass


class NumericalError(ACMDSAError):
    pass


class CalibrationError(ACMDSAError):
    pass


class StateError(ACMDSAError):
    pass


class RunError(ACMDSAError):
    """An optimization run aborted; carries the step index and the cause."""

    def __init__(self, step, cause):
        super().__init__(f"run aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause
