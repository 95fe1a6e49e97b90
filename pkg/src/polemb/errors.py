"""Exception hierarchy shared by every module."""


class PolembError(Exception):
    """Base class for toolkit errors."""


class ArchitectureError(PolembError, ValueError):
    pass


class ShapeError(PolembError, ValueError):
    pass


class NumericError(PolembError, ArithmeticError):
    pass


class EnvStateError(PolembError, RuntimeError):
    """Raised when stepping an episode that already finished."""


class ConfigError(PolembError, ValueError):
    pass


class MembershipError(PolembError, KeyError):
    pass


class ObservationError(PolembError, ValueError):
    pass


class SplitError(PolembError, RuntimeError):
    pass


class SamplingError(PolembError, ValueError):
    """Too few episodes, or a sampling contract (distinct/same-agent) was violated."""


class EmptyInputError(PolembError, ValueError):
    pass


class DegenerateError(PolembError, ValueError):
    """Degenerate embeddings (zero spread) or single-class labels."""


class TrainingError(PolembError, RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
