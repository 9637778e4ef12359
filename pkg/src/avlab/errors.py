class AvlabError(Exception):
    """Base class for every error raised on purpose by avlab."""


class ContractError(AvlabError, ValueError):
    """A caller broke a precondition of an operation."""


class DimensionError(ContractError):
    """Tensor shapes do not line up for the requested operation."""


class DomainError(AvlabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(AvlabError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""
