"""Exception types shared across the package."""


class CoarsekitError(Exception):
    """Base class for all package-specific errors."""


class InputError(CoarsekitError, ValueError):
    """Malformed or out-of-contract input (bad edges, bad parameters, ...)."""


class DisconnectedGraphError(InputError):
    """A single graph space must be connected; wrap pieces in a coarse union."""


class NotGeneratingError(InputError):
    """A generating set fails to reach some group element."""


class PartialSupportError(CoarsekitError):
    """An operation needing a fully supported kernel got a partial one."""


class MissingPairError(CoarsekitError, KeyError):
    """A kernel value was requested for a pair outside its support."""


class MissingChartError(CoarsekitError):
    """A fibred embedding lacks a chart required to cover some ball."""


class NotNegativeTypeError(CoarsekitError):
    """Embedding extraction hit a significantly negative Gram eigenvalue."""


class ScaleUnavailableError(CoarsekitError):
    """No component of the space supports the requested kernel scale."""


class CoverageError(CoarsekitError):
    """A point of the working region lies outside every cover element."""


class FeasibilityError(CoarsekitError):
    """The truncated space is too small for the requested construction."""


class ConfigError(InputError):
    """A pipeline configuration failed validation."""
