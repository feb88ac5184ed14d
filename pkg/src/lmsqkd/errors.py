"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class AbortInsufficientSample(RuntimeError):
    """Too few sifted rounds to estimate the error rate; the session aborts."""
