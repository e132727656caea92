"""Exception types shared across the package."""


class ConfigError(Exception):
    """Bad or missing configuration: unusable files, unknown ids, invalid values."""


class TraceParseError(ConfigError):
    """A data file could not be parsed; the message names the file and line."""


class RetrievalError(RuntimeError):
    """An embedding or retrieval backend failed."""


class DeviceError(RuntimeError):
    """The device backend rejected a requested operating-mode change."""
