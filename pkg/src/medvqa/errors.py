"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid or inconsistent model/pipeline configuration."""
