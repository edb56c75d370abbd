class BergerWaveError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BergerWaveError, ValueError):
    """Invalid grid, parameters or run configuration."""


class AssumptionViolation(ConfigurationError):
    """A nonlinearity fails a required structural assumption."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverError(BergerWaveError, RuntimeError):
    """A linear or nonlinear solve failed."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StepError(SolverError):
    """Newton iteration inside a time step did not converge."""


class SimulationError(BergerWaveError, RuntimeError):
    """A trajectory was interrupted; ``trajectory`` holds the partial record."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ConvergenceError(SolverError):
    """Stationary Newton solve diverged or stalled."""


class DegenerateFitError(BergerWaveError, ValueError):
    """Fit inputs carry no information (e.g. identical initial states)."""


class StiffnessWarning(UserWarning):
    """Time step is large relative to the stiffest beam mode."""
