"""Exception types shared across the package."""


class MisicalError(Exception):
    """Base class for all package errors."""


class ValidationError(MisicalError):
    """An input violated a documented precondition."""


class ConfigError(MisicalError):
    """A configuration value is missing, unknown, or out of range."""


class PoolFormatError(MisicalError):
    """Base class for pool-file decoding failures."""


class BadMagicError(PoolFormatError):
    pass


class UnsupportedVersionError(PoolFormatError):
    pass


class ChecksumError(PoolFormatError):
    pass


class RecordInvariantError(PoolFormatError):
    """A record violated a format invariant; carries the offending id."""

    def __init__(self, record_id, message):
        super().__init__(f"record {record_id}: {message}")
        self.record_id = record_id
