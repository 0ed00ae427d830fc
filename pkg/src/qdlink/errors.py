"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class MeasurementError(RuntimeError):
    """A power-meter reading could not be turned into a projection value."""


class NoPeakError(RuntimeError):
    """A coincidence histogram holds no cascade peak above background."""


class UndefinedContrastError(ZeroDivisionError):
    """Co- and cross-polarized counts sum to zero."""


class UndefinedFidelityError(RuntimeError):
    """The post-selection window of at least one basis is empty."""


class ConfigError(ValueError):
    """Invalid scenario configuration. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class SchemaError(ValueError):
    """An event log does not match the expected schema version or layout."""


class MissingArtifactError(FileNotFoundError):
    """A run directory lacks an artifact that the report needs."""
