"""Domain-specific signals shared across the package."""


class NullJump(Exception):
    """The monitored channel has zero weight: the state cannot emit."""


class Extinct(Exception):
    """Survival probability fell below the renormalization threshold."""


class InfeasibleFuture(Exception):
    """All smoothing weights vanished: the future record is incompatible."""


class InconsistentWeight(Exception):
    """A non-negligible classical weight sits on a vanishing filtered block."""


class DegenerateRoots(UserWarning):
    """Near-degenerate denominator roots; confluent partial fractions in use."""


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""
