"""Exception hierarchy shared across the toolkit.

Every error carries a stable machine-readable ``category`` slug so the CLI
can report failures in a scriptable way.
"""


class VortraceError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class SingularConfiguration(VortraceError):
    """Two bodies closer than the collision tolerance."""

    category = "singular-configuration"


class NonFiniteState(VortraceError):
    """A coordinate became inf or nan during integration."""

    category = "non-finite-state"


class GridTooShort(VortraceError):
    """Not enough samples for the requested stencil or kernel."""

    category = "grid-too-short"


class DegenerateSignal(VortraceError):
    """Signal variance too small for a normalized autocorrelation."""

    category = "degenerate-signal"


class NoDecorrelation(VortraceError):
    """A tracer never stays below the autocorrelation cutoff."""

    category = "no-decorrelation"


class IntervalTooShort(VortraceError):
    """A partition interval would contain fewer than two samples."""

    category = "interval-too-short"


class DidNotConverge(VortraceError):
    """An optimization stage failed to reach its tolerances."""

    category = "did-not-converge"


class ShapeMismatch(VortraceError):
    """Arrays or files that must align do not."""

    category = "shape-mismatch"


class SchemaError(VortraceError):
    """A data file violates the trajectory/velocity file schema."""

    category = "schema"


class ConfigError(VortraceError):
    """An experiment configuration document is invalid."""

    category = "config"
