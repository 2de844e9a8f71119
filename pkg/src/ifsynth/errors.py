"""Exception hierarchy shared by all modules."""


class IFSError(Exception):
    """Base class; the CLI maps subclasses of ValidationError to exit code 1."""


class ValidationError(IFSError, ValueError):
    """Bad input, bad configuration or malformed file."""


class DimensionError(ValidationError):
    """Incompatible array extents."""


class ContractError(IFSError, RuntimeError):
    """A caller violated an operation's preconditions."""


class ConfigError(ValidationError):
    """Unsatisfiable or unknown configuration."""


class FormatError(ValidationError):
    """A file does not follow its binary/text format."""


class LoadError(IFSError, OSError):
    """A referenced file could not be read."""


class DivergenceError(IFSError, FloatingPointError):
    """A training loss became NaN/Inf."""
