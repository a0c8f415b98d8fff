"""Exception types shared across the package."""


class TandemError(Exception):
    """Base class for package errors."""


class ShapeError(TandemError, ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(TandemError, ValueError):
    """An operation was called outside its contract (non-shape)."""


class ConfigError(TandemError, ValueError):
    """A configuration value is unknown, missing, or out of range."""


class VocabularyError(TandemError, ValueError):
    """A token id falls outside the embedding table."""


class TruncationError(TandemError, ValueError):
    """A token sequence exceeds the hard length cap; nothing is truncated silently."""


class CheckpointError(TandemError, ValueError):
    """A checkpoint or snapshot file is missing, corrupt, or incompatible."""


class DataError(TandemError, ValueError):
    """A dataset file is malformed or inconsistent with its header."""
