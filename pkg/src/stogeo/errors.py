"""Exception hierarchy shared by all stogeo modules."""


class StogeoError(Exception):
    """Base class for library errors."""


class ChartError(StogeoError, ValueError):
    """A point left every chart domain, or a chart is degenerate there."""


class NumericalError(StogeoError, RuntimeError):
    """A numerical scheme lost control (step too large, blow-up, divergence)."""


class ConfigError(StogeoError, ValueError):
    """Invalid experiment or problem configuration."""
