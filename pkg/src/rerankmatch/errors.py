"""Exception types raised across the package."""


class ReRankMatchError(Exception):
    """Base class for all package errors."""


class ShapeError(ReRankMatchError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ReRankMatchError, ValueError):
    """A row has (near) zero norm and cannot be normalized."""

    def __init__(self, row, norm):
        self.row = int(row)
        self.norm = float(norm)
        super().__init__(f"row {self.row} has degenerate norm {self.norm:.3g}")


class ContractError(ReRankMatchError, ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigError(ReRankMatchError, ValueError):
    """Invalid configuration value or combination.

    ``key`` and ``line`` are filled in when the error comes from a config
    file or a command-line override.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class IdxParseError(ReRankMatchError, ValueError):
    """Malformed IDX file."""

    def __init__(self, message, path=None, offset=0):
        self.path = path
        self.offset = int(offset)
        loc = f"{path}: " if path is not None else ""
        super().__init__(f"{loc}offset {self.offset}: {message}")


class NonFiniteGradientError(ReRankMatchError, FloatingPointError):
    """Optimizer refused a NaN/Inf gradient."""

    def __init__(self, param_name):
        self.param_name = param_name
        super().__init__(f"non-finite gradient for parameter {param_name!r}; step aborted")


class CheckpointError(ReRankMatchError, ValueError):
    """Checkpoint file does not match the expected format or shapes."""
