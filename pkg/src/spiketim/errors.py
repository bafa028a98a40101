"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value violates its constraints."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


class FormatError(ValueError):
    """A file could not be parsed; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NanLossError(RuntimeError):
    """Training produced a non-finite loss; carries diagnostics."""

    def __init__(self, message, lr=None, grad_norms=None):
        super().__init__(message)
        self.lr = lr
        self.grad_norms = grad_norms or {}
