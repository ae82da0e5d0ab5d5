"""Exception hierarchy shared by all sidenet modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4. Everything else is a plain bug and exits 1.
"""


class SidenetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SidenetError):
    """Invalid configuration, option combination, or tensor geometry."""


class ShapeError(ConfigError):
    """Operands have incompatible shapes. Message names both shapes."""


class DataError(SidenetError):
    """Malformed or missing input data (manifests, archives, clips)."""


class ArchiveError(DataError):
    """Tensor archive is missing, corrupt, or incomplete."""


class MiningError(DataError):
    """Facial part attribute mining could not collect a required part."""


class MetricError(DataError):
    """Metric undefined for the given inputs (e.g. single-class labels)."""


class NumericalError(SidenetError):
    """A non-finite value appeared where the contract requires finiteness."""


class DegenerateVectorError(NumericalError):
    """A vector with (near-)zero norm reached a normalization step."""
