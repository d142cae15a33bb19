"""Exception types shared across the package."""


class GnevaError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(GnevaError):
    """A matrix required to be symmetric positive definite is not."""


class DomainError(GnevaError):
    """A special-function argument lies outside its domain."""


class DegreesOfFreedomTooSmall(GnevaError):
    """Posterior degrees of freedom too small for a finite predictive."""


class EmptyCandidatePool(GnevaError):
    """Goal selection was asked to run on an empty candidate list."""


class RegionTooLarge(GnevaError):
    """Candidate grid would exceed the configured cell cap."""


class ShapeMismatch(GnevaError):
    """Feature widths or parameter shapes disagree with the configuration."""


class ParseError(GnevaError):
    """A scenario or config file could not be parsed."""


class ValidationError(GnevaError):
    """A parsed value violates a documented invariant."""


class MissingHorizonState(GnevaError):
    """The target has no state at the observation horizon."""


class HorizonMismatch(GnevaError):
    """Prediction and ground-truth horizons disagree."""


class NonFiniteLoss(GnevaError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message: str, scenario_id: str | None = None):
        super().__init__(message)
        self.scenario_id = scenario_id
