"""Exception types shared across the package."""


class SkelsimError(Exception):
    """Base class for all package errors."""


class MechanismError(SkelsimError):
    """Invalid branching-mechanism parameters or an unsupported request."""


class SchemaError(SkelsimError):
    """Malformed mechanism/experiment specification."""


class InconclusiveAnalysis(SkelsimError):
    """A numeric probe could not certify an answer.

    Raised instead of guessing, e.g. when a root search hits the probing cap
    without an asymptotic certificate, or a divergence probe cannot decide.
    """


class QuadratureError(SkelsimError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class FlowGuardError(SkelsimError):
    """An ODE flow left its admissible region by more than the tolerance slack."""


class SimulationError(SkelsimError):
    """Internal inconsistency in a path sampler (caps, step underflow, tails)."""
