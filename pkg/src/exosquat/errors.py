"""Exception types raised across the package."""


class ExosquatError(Exception):
    """Base class for all package errors."""


class InvalidSpec(ExosquatError, ValueError):
    """A model or configuration description violates an invariant."""


class SingularMass(ExosquatError, ArithmeticError):
    """The joint-space mass matrix could not be factorized."""


class NumericalDivergence(ExosquatError, ArithmeticError):
    """A state component left its configured sanity bound."""


class EpisodeFinished(ExosquatError, RuntimeError):
    """``step`` was called on an environment whose episode has ended."""


class Unreachable(ExosquatError, ValueError):
    """A requested reference pose is outside the leg's kinematic reach."""


class DimensionMismatch(ExosquatError, ValueError):
    """An array does not match the network's expected input size."""


class LengthMismatch(ExosquatError, ValueError):
    """Aligned rollout arrays have different lengths."""


class NonFiniteLoss(ExosquatError, FloatingPointError):
    """A PPO loss or gradient became NaN or infinite."""


class IncompleteCycle(ExosquatError, ValueError):
    """Telemetry covers less than one full reference cycle."""
