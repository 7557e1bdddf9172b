"""Shared exception types."""


class ShapeError(ValueError):
    """Tensor dimensions do not match what an operation requires."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ValueError):
    """Invalid configuration file, key, or value."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input, e.g. a zero-norm embedding."""


class EvaluationError(RuntimeError):
    """A function produced a non-finite value where a finite one is required."""


class NonFiniteLossError(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic dump of the batch."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump if dump is not None else {}
