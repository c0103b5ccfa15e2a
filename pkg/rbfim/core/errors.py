"""Exception hierarchy shared by the library, the CLI and the service."""

from typing import Optional


class RBFIMError(Exception):
    """Base class for every error raised by the toolkit."""

    code = "rbfim_error"


class InputError(RBFIMError):
    """Bad user input: unreadable files, unusable clouds, malformed manifests."""

    code = "input_error"


class PlyFormatError(InputError):
    code = "ply_format_error"

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}" if line is None else f"{self.path}, header line {line}"
        super().__init__(f"{where}: {message}")


class MissingColorsError(InputError):
    code = "missing_colors"


class InsufficientPointsError(InputError):
    code = "insufficient_points"


class DegenerateGeometryError(InputError):
    code = "degenerate_geometry"


class ManifestError(InputError):
    code = "manifest_error"

    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}" if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class ConfigError(RBFIMError):
    code = "config_error"


class NumericError(RBFIMError):
    code = "numeric_error"


class SingularSystemError(NumericError):
    code = "singular_system"


class DegenerateStatisticsError(NumericError):
    code = "degenerate_statistics"
