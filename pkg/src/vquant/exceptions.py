"""Exception hierarchy shared by every module.

The CLI maps these onto its exit codes: usage-type errors to 2, file format
errors to 3 and numeric failures to 4.
"""


class VQuantError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(VQuantError, ValueError):
    """Invalid argument value (distribution parameters, ratios, flags)."""


class ConfigError(ParameterError):
    """Invalid quantization or training configuration."""


class ModeError(ParameterError):
    """Input incompatible with the requested codec mode or range policy."""


class DimensionError(VQuantError, ValueError):
    """Shape mismatch between operands."""


class EncodingError(VQuantError, ValueError):
    """A code does not fit in the requested bit width."""


class FormatError(VQuantError):
    """Malformed or truncated binary file."""


class PlanError(ParameterError):
    """Shard plan incompatible with the tensor."""


class StateError(VQuantError, RuntimeError):
    """Stale, consumed or missing activation caches."""


class NumericError(VQuantError, ArithmeticError):
    """Non-finite loss, gradient or weight."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
