"""Exception types shared across the package."""


class RDCNetError(Exception):
    """Base class for all package errors."""


class ShapeError(RDCNetError, ValueError):
    """Operand shapes are incompatible or an output extent would be < 1."""


class ConfigError(RDCNetError, ValueError):
    """Invalid architecture, mask, training or run configuration.

    ``field`` names the offending configuration key when known and ``line``
    the 1-based line number in a config file.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class ContractError(RDCNetError, RuntimeError):
    """A caller violated an operation's precondition."""


class DataError(RDCNetError, ValueError):
    """Malformed or out-of-range dataset content."""


class ParseError(DataError):
    """A binary record could not be decoded; ``offset`` is the byte offset."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NonFiniteError(RDCNetError, FloatingPointError):
    """A tensor checked at a validation checkpoint holds NaN or Inf."""

    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite values in tensor {name!r}")
