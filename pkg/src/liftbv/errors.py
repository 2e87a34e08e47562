"""Exception taxonomy for the liftbv pipeline.

Every failure mode raised by the library is a subclass of LiftbvError, so
callers (and the CLI) can map errors onto exit codes without string matching.
"""


class LiftbvError(Exception):
    """Base class for all liftbv errors."""

    exit_code = 1


class InvalidArgumentError(LiftbvError):
    """Caller violated a documented precondition."""

    exit_code = 1


class ConstructionFailure(LiftbvError):
    """Scaffold construction failed (e.g. q too small for the target)."""

    exit_code = 4

    def __init__(self, msg, cube_index=None):
        super().__init__(msg)
        self.cube_index = cube_index


class SingularPointError(LiftbvError):
    """Evaluation requested at a point excluded from the retraction domain."""


class NearSingularError(LiftbvError):
    """Point within geometric tolerance of the singular set."""


class ProjectionFailure(LiftbvError):
    """Fixed-point correction or manifold projection did not converge."""


class StepTooLargeError(LiftbvError):
    """Path-lifting step at or beyond the injectivity margin."""


class NotSameFiberError(LiftbvError):
    """deck_identify called on points with different projections."""


class NormalizationFailure(LiftbvError):
    """Fundamental-domain search exhausted."""


class SelectionFailure(LiftbvError):
    """No transversal shift found within the trial budget."""

    exit_code = 4


class NearJumpError(LiftbvError):
    """Lift requested too close to the jump set for certified stepping."""


class LiftFailure(LiftbvError):
    """Path lifting exceeded its step budget."""


class BoundViolationError(LiftbvError):
    """A certified bound was exceeded in strict mode."""

    exit_code = 2


class RefinementNeededError(LiftbvError):
    """Quadrature cell crosses the jump set; refinement required."""


class IllPosedLoopError(LiftbvError):
    """Monodromy loop touches a singular stratum or facet boundary."""


class IngestError(LiftbvError):
    """Malformed field file."""

    exit_code = 3

    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class CheckFailure(LiftbvError):
    """A strict pipeline check failed."""

    exit_code = 2
