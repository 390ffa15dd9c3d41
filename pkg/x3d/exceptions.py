"""
Error hierarchy shared by the library, the CLI and the API.

Each error carries the CLI exit code the management commands translate it to.
"""


class X3DError(Exception):
    exit_code = 1


class SizeError(X3DError):
    """Requested more samples or neighbors than the cloud holds."""
    exit_code = 2


class ShapeError(X3DError):
    """Array dimensions do not match the configured layer widths."""
    exit_code = 2


class ConfigError(X3DError):
    exit_code = 2


class FormatError(X3DError):
    """Malformed PLY / X3PC / X3CK input."""
    exit_code = 2


class TapeStateError(X3DError):
    exit_code = 1


class NumericalAbort(X3DError):
    """Non-finite loss or gradient; training cannot continue."""
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
