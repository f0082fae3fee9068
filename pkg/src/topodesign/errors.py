class ConfigError(ValueError):
    """Invalid configuration: unknown kinds, inconsistent dimensions, bad fields."""
