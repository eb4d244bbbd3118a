"""Exception hierarchy for vidsgg."""

from typing import Optional


class VidSGGError(Exception):
    """Base class for every error raised by vidsgg."""

    pass


class ConfigurationError(VidSGGError):
    """Raised when parameters, tables or configuration values are missing or mis-shaped."""

    pass


class PreconditionError(VidSGGError, ValueError):
    """Raised when an operation is called outside its documented preconditions."""

    pass


class IngestionError(VidSGGError):
    """Raised when an input file cannot be parsed or references something that does not exist.

    Attributes:
        source: File (or stream) the offending record came from
        locator: Line number or record key inside that source
    """

    def __init__(self, message: str, source: Optional[str] = None, locator: Optional[str] = None) -> None:
        self.source = source
        self.locator = locator
        where = ":".join(part for part in (source, locator) if part)
        super().__init__(f"{where}: {message}" if where else message)
