"""Exception types shared across the package.

The CLI maps these onto distinct exit codes; library callers can catch the
base classes.
"""


class ConfigError(ValueError):
    """Invalid configuration, bad preconditions, or malformed inputs."""


class EnumerationLimitError(ConfigError):
    """An exact-enumeration routine was asked for more points than its guard allows."""


class NumericError(RuntimeError):
    """A numeric invariant was violated (non-finite loss, gradients, ...)."""


class DegenerateProposalError(NumericError):
    """Every importance weight underflowed to zero probability."""


class FileFormatError(ValueError):
    """A dataset or checkpoint file does not parse as the documented format."""
