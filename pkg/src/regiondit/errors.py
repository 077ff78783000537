"""Exception hierarchy. CLI exit codes hang off the three top-level families."""

from __future__ import annotations


class RegionDitError(Exception):
    """Base class for every error raised by this package."""


# -- numeric / shape ------------------------------------------------------

class DimensionError(RegionDitError, ValueError):
    pass


class NonFiniteError(RegionDitError, FloatingPointError):
    pass


class FixtureFormatError(RegionDitError, ValueError):
    pass


# -- regions --------------------------------------------------------------

class RegionError(RegionDitError, ValueError):
    pass


class RegionTooSmallError(RegionError):
    pass


class UnsupportedRatioError(RegionError):
    pass


class PartitionError(RegionError):
    pass


# -- text states ----------------------------------------------------------

class SourceError(RegionDitError, ValueError):
    pass


class PromptStateError(RegionDitError, ValueError):
    """Failure while building the state of one prompt in a batch."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"prompt {index}: {cause}")
        self.index = index
        self.cause = cause


# -- pipeline -------------------------------------------------------------

class BlockError(RegionDitError):
    """Error inside a DiT block; wraps the original exception with the block index."""

    def __init__(self, block: int, cause: Exception):
        super().__init__(f"block {block}: {cause}")
        self.block = block
        self.cause = cause


class PipelineError(RegionDitError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class ConfigError(RegionDitError, ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = ""
        if field:
            where += f" (field '{field}')"
        if line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.field = field
        self.line = line


# -- LLM ------------------------------------------------------------------

class TransportError(RegionDitError):
    pass


class SchemaError(RegionDitError, ValueError):
    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw
