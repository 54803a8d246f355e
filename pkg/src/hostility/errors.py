"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed or inconsistent input data (files, checkpoints, labels)."""


class ShapeError(ValueError):
    """Tensor or configuration shapes do not conform."""


class UsageError(Exception):
    """Invalid command-line arguments or run configuration."""


class InvariantError(Exception):
    """An internal invariant was violated; indicates a bug, not bad input."""
