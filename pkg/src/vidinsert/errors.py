"""Shared exception types for contract violations."""


class ShapeError(ValueError):
    """Array dimensions violate an operation's contract."""


class ContractError(ValueError):
    """Arguments violate an operation's preconditions."""
