"""Exception types raised across vflsel.

Each class marks one kind of diagnostic so callers (and the CLI exit-code mapping) can tell
a malformed configuration from a numerical failure.
"""


class VflselError(Exception):
    """Root of all vflsel errors."""


class ShapeError(VflselError, ValueError):
    """Array dimensions do not agree with a network or a dataset."""


class DomainError(VflselError, ValueError):
    """Value outside its domain: non-finite numbers, label out of range."""


class ConsistencyError(VflselError, RuntimeError):
    """Two objects that must describe the same thing disagree (e.g. trace vs. network)."""


class ContractError(VflselError, RuntimeError):
    """An operation was called outside its precondition."""


class ConfigError(VflselError, ValueError):
    """Invalid experiment or stage configuration."""


class DataError(VflselError, ValueError):
    """Dataset ingestion failure."""


class BatchIndexError(VflselError, IndexError):
    """Sample index outside [0, N)."""


class RunFailedError(VflselError, RuntimeError):
    """A pipeline stopped part-way; `report` holds whatever was recorded before the failure."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
