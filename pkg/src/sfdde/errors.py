"""Exception types shared across the package."""


class SfddeError(Exception):
    """Base class for all errors raised by this package."""


class NonIntegrableError(SfddeError):
    """A quadrature against a Levy measure diverged (origin or tail)."""


class DimensionMismatchError(SfddeError):
    """Array/matrix dimensions inconsistent with the declared model dims."""


class InfiniteRateError(SfddeError):
    """Jump sampling requested at zero truncation for an infinite-activity measure."""


class GridError(SfddeError):
    """A time is not aligned with the grid, or grid construction is invalid."""


class AtomOffGridError(GridError):
    """A delay-measure atom sits between grid nodes."""


class OffsetOutOfRangeError(SfddeError):
    """A delay offset falls outside [-r, 0]."""


class PointEvaluationError(SfddeError):
    """Point evaluation of the Lp part of a segment in Mp mode."""


class StateNotMaintainedError(SfddeError):
    """A noisy-delay kernel was used without its auxiliary integral channel."""


class EmptyEnsembleError(SfddeError):
    """A mean-field functional was evaluated on an empty ensemble."""


class NonFiniteError(SfddeError):
    """The solver produced a non-finite state."""

    def __init__(self, step: int, time: float, detail: str):
        self.step = step
        self.time = time
        self.detail = detail
        super().__init__(f"non-finite state at step {step} (t={time:g}): {detail}")


class NotFactorizedError(SfddeError):
    """The model's jump coefficient is not in factorized h0*lambda form."""


class InsufficientIteratesError(SfddeError):
    """Too few Picard iterates for a gap analysis."""


class ShiftBeyondHorizonError(SfddeError):
    """A forward-integral shift needs path values past the horizon."""


class JumpDetectedError(SfddeError):
    """An operation requiring jump-free (W^{1,p}) segments met a jump."""


class MissingJumpLogError(SfddeError):
    """An Ito residual was requested from a path without jump bookkeeping."""


class HorizonExceedsDelayError(SfddeError):
    """Backward extension asked for a horizon longer than the delay."""


class ConfigError(SfddeError):
    """Experiment configuration failed validation."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
