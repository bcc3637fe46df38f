"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary domain errors (bad argument
values); the classes below exist so the CLI can map failure families to
distinct exit codes.
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown method, missing artifact, bad grid."""


class DataError(ValueError):
    """Malformed or inconsistent data file (tensor, graph, checkpoint)."""


class ContractViolation(RuntimeError):
    """A caller-side precondition was broken, or an audit found a violation
    of a property that is supposed to hold exactly."""
