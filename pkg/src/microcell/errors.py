"""Exception hierarchy shared across the toolkit.

ValidationError covers bad user input (CLI exit code 1); everything else
derives from MicrocellError and maps to runtime failures (exit code 2).
"""


class MicrocellError(Exception):
    """Base class for toolkit failures."""


class ValidationError(MicrocellError, ValueError):
    """Invalid parameters, configuration, or input files."""


class InvalidMaterialError(ValidationError):
    """Material constants outside the physically admissible range."""


class EmptyStructureError(MicrocellError):
    """An operation that needs solid material received an all-void grid."""


class DegenerateCellError(MicrocellError):
    """A cell whose homogenized response is singular or broken."""


class SolverFailureError(MicrocellError):
    """Iterative solver did not reach the requested residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class UndefinedOverlapError(MicrocellError):
    """Face overlap requested for two empty masks."""


class TrainingDivergedError(MicrocellError):
    """Non-finite loss encountered during adversarial training."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class IllPosedModelError(MicrocellError):
    """Macro FE model is singular (missing supports, zero stiffness)."""


class InfeasibleConfigurationError(MicrocellError):
    """Feasible set of the optimization problem is empty."""


class AssignmentFailureError(MicrocellError):
    """No valid unit-cell candidate could be generated for an element."""

    def __init__(self, message, elements=None):
        super().__init__(message)
        self.elements = elements or []
