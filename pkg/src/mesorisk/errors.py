"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data-format problems with 3, and numerical failures with 4.
"""


class MesoriskError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MesoriskError):
    """Invalid configuration, option value, or option combination."""


class DataError(MesoriskError):
    """Malformed or unusable input data."""


class PanelFormatError(DataError):
    """Structurally invalid spread or metadata file.

    Messages name the offending row where possible so the file can be
    fixed without guesswork.
    """


class ZeroVarianceError(DataError):
    """A return series has zero variance and cannot be standardized."""

    def __init__(self, issuer_id: str):
        self.issuer_id = issuer_id
        super().__init__(f"return series for issuer {issuer_id!r} has zero variance")


class EmptyPanelError(DataError):
    """An operation received a panel with too few rows or columns."""


class NumericalError(MesoriskError):
    """A numerical routine failed to produce a usable result."""
