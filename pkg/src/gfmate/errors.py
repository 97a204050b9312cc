"""Exception hierarchy. Exit codes: 2 config, 3 data, 4 numeric."""


class GfmateError(Exception):
    exit_code = 1


class ConfigError(GfmateError):
    """Invalid configuration value or inconsistent call (bad rank, tau <= 0, ...)."""

    exit_code = 2


class ShapeError(ConfigError):
    """Operands with incompatible shapes."""


class DataError(GfmateError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ParseError(DataError):
    """Unparseable input file; message carries path and line number."""


class InsufficientShotsError(DataError):
    """A class does not have enough labelled nodes for the requested shot count."""


class CheckpointError(DataError):
    """Corrupt, truncated or otherwise unreadable checkpoint file."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class StaleCacheError(DataError):
    """Cached checkpoint metadata disagrees with the requested configuration."""


class NumericError(GfmateError):
    """Non-finite value produced where the contract requires finite output."""

    exit_code = 4
