"""Exception hierarchy shared across the package."""


class Lesion3DError(Exception):
    """Base class for all package errors."""


class ContractError(Lesion3DError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ParseError(Lesion3DError, ValueError):
    """A file could not be parsed.

    ``key`` names the offending header key or ``line`` the offending line,
    when known.
    """

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class IntegrityError(Lesion3DError, ValueError):
    """Stored sizes disagree with the payload (voxel counts, run lengths)."""


class UnsupportedRankError(Lesion3DError, ValueError):
    """A MetaImage file does not describe a 3D image."""


class GridMismatchError(Lesion3DError, ValueError):
    """Two volumes paired for a metric do not share a grid."""


class UndefinedMetricError(Lesion3DError, ValueError):
    """A metric is mathematically undefined for the given inputs."""
