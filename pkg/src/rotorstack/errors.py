"""Exception types shared across the flight stack."""


class RotorstackError(Exception):
    """Base class for all stack-specific errors."""


class DegenerateHeading(RotorstackError):
    """Body x-axis is (numerically) parallel to world z; heading undefined."""


class NotNearRotation(RotorstackError):
    """Matrix is too far from SO(3) to project safely."""


class ParseError(RotorstackError):
    """Structured-text document could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(RotorstackError):
    """A document parsed but violates an invariant; `field` names the culprit."""

    def __init__(self, field: str, message: str = ""):
        super().__init__(f"{field}: {message}" if message else field)
        self.field = field


class UnknownPlatform(RotorstackError):
    """Requested platform name is not in the registry."""


class InfeasibleAllocation(RotorstackError):
    """Requested wrench cannot be realized by the motor set."""


class DegenerateForce(RotorstackError):
    """Desired force vector vanished (free-fall reference)."""


class UnknownController(RotorstackError):
    """Requested feedback design name is not registered."""


class InvalidReference(RotorstackError):
    """Reference contains non-finite values."""


class NonUniformSampling(RotorstackError):
    """Trajectory samples are not uniformly spaced in time."""


class EmptyTrajectory(RotorstackError):
    """Trajectory needs at least two samples."""


class SolverFailure(RotorstackError):
    """Receding-horizon QP did not reach its residual tolerance."""


class DuplicateSource(RotorstackError):
    """Localization source id already registered."""


class UnknownSource(RotorstackError):
    """Localization source id is not registered."""


class StaleMeasurement(RotorstackError):
    """Measurement older than the staleness cutoff; dropped and counted."""


class NoActiveSource(RotorstackError):
    """Estimator stepped with no active localization source selected."""


class UnhealthySource(RotorstackError):
    """Switch target source is degraded or lost."""


class IllegalTransition(RotorstackError):
    """Mission phase transition not allowed by the state machine."""


class SimulationDiverged(RotorstackError):
    """A simulated state went non-finite; `tick` is the offending slow tick."""

    def __init__(self, message: str, tick: int):
        super().__init__(f"{message} (slow tick {tick})")
        self.tick = tick
