"""Exception types raised by qflow."""


class QFlowError(Exception):
    """Base class for all qflow errors."""


class OddDimension(QFlowError, ValueError):
    pass


class ModeError(QFlowError, ValueError):
    pass


class ShapeMismatch(QFlowError, ValueError):
    pass


class ConformalFactorOverflow(QFlowError, FloatingPointError):
    """n * max|u| exceeded the exponential safety threshold."""


class NonpositiveFMass(QFlowError, ValueError):
    """The f-weighted volume of the metric is not positive (state left C_f)."""


class InitialDataRejected(QFlowError, ValueError):
    pass


class NumericFailure(QFlowError, RuntimeError):
    pass


class NoConvergence(QFlowError, RuntimeError):
    pass


class FitDiverged(QFlowError, RuntimeError):
    pass


class EmptyRadii(QFlowError, ValueError):
    pass


class NoAnalyticDerivatives(QFlowError, TypeError):
    pass


class ConfigError(QFlowError, ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class MissingKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


class NonpositiveMeanF(ConfigError):
    pass


class SnapshotError(QFlowError, IOError):
    pass


class VersionMismatch(SnapshotError):
    pass


class CorruptPayload(SnapshotError):
    pass


class NonMorseWarning(UserWarning):
    """A critical point has a degenerate Hessian."""
