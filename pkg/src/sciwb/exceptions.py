"""Exception taxonomy shared by every sciwb module.

The CLI maps these onto process exit codes; library code raises them
directly so callers can distinguish caller bugs from bad data from
numerical blow-ups.
"""


class SciwbError(Exception):
    """Base class for all package-specific errors."""


class ContractError(SciwbError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Array shapes or axis sizes are inconsistent with the operation."""


class UsageError(SciwbError):
    """Command-line arguments are missing or mutually inconsistent."""


class DataError(SciwbError):
    """Input files or configuration content are malformed or missing."""


class NumericalError(SciwbError):
    """A computation produced non-finite values and was aborted."""
