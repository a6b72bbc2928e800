"""Exception hierarchy shared across the toolkit.

Every error raised on purpose derives from TapkitError so the CLI can map
failures onto its documented exit codes.
"""


class TapkitError(Exception):
    pass


class IntervalError(TapkitError, ValueError):
    """Degenerate or out-of-range temporal interval."""


class ConfigError(TapkitError, ValueError):
    """Inconsistent or invalid configuration."""


class DataFormatError(TapkitError, ValueError):
    """Unparseable, schema-violating or corrupt input file."""


class ShapeError(TapkitError, ValueError):
    """Tensor shapes inconsistent with the requested operation."""


class DivergenceError(TapkitError, ArithmeticError):
    """Non-finite values encountered during training."""


class MetricError(TapkitError, ValueError):
    """Metric undefined on the given data (e.g. no ground truth at all)."""


class PlacementError(TapkitError, RuntimeError):
    """Synthetic instances could not be packed without overlap."""


class StageDependencyError(TapkitError, RuntimeError):
    """A pipeline stage is missing an artifact a previous stage produces."""
