"""Shared exception types. CLI exit codes map onto these."""


class NesterError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(NesterError):
    """Invalid configuration value or combination."""


class DataFormatError(NesterError):
    """Malformed or inconsistent on-disk artifact (dataset, checkpoint)."""


class NumericError(NesterError):
    """Non-finite value where a finite one is required."""


class InfeasibleError(NesterError):
    """No valid equation exists for the requested sequence length."""


class SearchSpaceError(NesterError):
    """Brute-force enumeration refused: search space above the cap."""
