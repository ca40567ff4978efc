"""Exception types raised by jumptrunc."""


class JumpTruncError(Exception):
    """Base class for all library errors."""


class DomainError(JumpTruncError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ConfigurationError(JumpTruncError, ValueError):
    """A problem, policy or scheme is configured inconsistently."""


class ResourceError(JumpTruncError, MemoryError):
    """A request would allocate more memory than the guard permits."""


class SimulationError(JumpTruncError, RuntimeError):
    """A simulation produced a state it must never produce (e.g. truncated blow-up)."""
