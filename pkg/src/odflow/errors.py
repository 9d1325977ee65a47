"""Shared exception base for the package."""


class OdflowError(Exception):
    """Base class for all errors raised by odflow."""
