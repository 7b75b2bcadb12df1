"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/schema
problems exit 2.
"""


class BevFuseError(Exception):
    """Base class for all package errors."""


class InvalidPoseError(BevFuseError):
    """Rotation matrix is not orthonormal within tolerance."""


class ConfigError(BevFuseError):
    """Inconsistent or incomplete configuration (rig, grid, train config)."""


class DataError(BevFuseError):
    """Dataset content violates a documented invariant (e.g. missing labels)."""


class SchemaError(DataError):
    """A file does not conform to its documented schema."""


class DatasetIOError(DataError):
    """A dataset file is missing or unreadable; message names the path."""
