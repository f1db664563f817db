"""Exception hierarchy shared by the engine.

ConfigError maps to CLI exit code 2, DataError to exit code 3.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class ConfigError(EngineError):
    """Invalid configuration: bad value, unknown key, malformed file."""


class DataError(EngineError):
    """Invalid or insufficient input data."""
