"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, solver
failures exit 3, inference failures exit 4.
"""


class AcvBayesError(Exception):
    """Base class for all package errors."""


class ValidationError(AcvBayesError):
    """Invalid configuration, argument, or domain violation."""


class TraceFormatError(ValidationError):
    """A data file could not be parsed.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SolverDivergenceError(AcvBayesError):
    """The per-step Newton iteration failed to converge.

    ``step_index`` is the index of the time step at which the surface
    coupling could not be solved.
    """

    def __init__(self, step_index, detail=""):
        msg = f"surface Newton iteration diverged at time step {step_index}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.step_index = step_index


class FitFailureError(AcvBayesError):
    """Maximum-likelihood optimisation did not produce a usable optimum."""
