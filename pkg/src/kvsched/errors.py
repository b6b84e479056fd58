class ConfigError(ValueError):
    """Invalid configuration, flags or input files."""


class IntegrityError(RuntimeError):
    """Simulator state or event log violates an invariant."""
