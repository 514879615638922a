"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class MtMBSPError(Exception):
    """Base class for all package errors."""


class ParameterError(MtMBSPError, ValueError):
    """A distribution or model parameter is outside its domain."""


class ValidationError(MtMBSPError, ValueError):
    """Input data, schema or configuration failed validation."""


class ContractError(MtMBSPError, TypeError):
    """An operation was called on an argument it does not accept."""


class NumericalError(MtMBSPError, ArithmeticError):
    """A numerical routine failed (e.g. Cholesky after maximal jitter).

    ``iteration`` is filled in by the chain runner when the failure happens
    inside a Gibbs sweep.
    """

    def __init__(self, message, *, min_eigenvalue=None, iteration=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.iteration = iteration

    def __str__(self):
        msg = super().__str__()
        if self.iteration is not None:
            msg = f"{msg} (iteration {self.iteration})"
        return msg


class InputError(MtMBSPError, OSError):
    """A file could not be read or written, or its contents are corrupt."""


class ChecksumError(InputError):
    """A persisted file failed its integrity check."""
