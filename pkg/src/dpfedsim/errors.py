"""Exception types shared across the simulator."""


class ParameterError(ValueError):
    """An argument violates an operation's stated precondition."""


class DataError(ValueError):
    """A dataset or shard is empty, inconsistent, or too small to use."""


class FormatError(ValueError):
    """A file does not conform to its binary format.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CalibrationError(RuntimeError):
    """Noise calibration could not bracket or reach the target."""


class ProtocolError(RuntimeError):
    """Secure-aggregation submissions are mutually inconsistent."""


class ConfigError(ValueError):
    """An experiment configuration is invalid; names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key
