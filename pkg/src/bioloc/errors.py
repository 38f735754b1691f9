"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad scenario, map spec, or CLI configuration (exit code 2)."""


class MapParseError(ConfigError):
    """Malformed map, scenario, or landmark store file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DegenerateBeliefError(RuntimeError):
    """The belief lost all activity and could not be recovered (exit code 3)."""
