"""Error classes shared across the package."""


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


class FormatError(Exception):
    """File content does not match the expected binary/text format."""
