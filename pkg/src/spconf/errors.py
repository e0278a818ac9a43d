"""Exception hierarchy shared by every module."""


class SpconfError(Exception):
    """Base class for all library errors."""


class DomainError(SpconfError, ValueError):
    """An argument is outside the domain of the operation."""


class ConditioningError(SpconfError, ArithmeticError):
    """A matrix that must be factorized or inverted is (numerically) singular."""

    def __init__(self, message, min_eigenvalue=None):
        if min_eigenvalue is not None:
            message = f"{message} (smallest eigenvalue {min_eigenvalue:.3e})"
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class StructuralError(SpconfError, ValueError):
    """A graph or adjacency structure violates a required property."""


class RankError(SpconfError, ArithmeticError):
    """A design matrix is rank deficient (e.g. constant covariate)."""


class DegeneracyError(SpconfError, ArithmeticError):
    """A bias ratio has a vanishing denominator but a non-vanishing numerator."""


class ConvergenceError(SpconfError, RuntimeError):
    """An optimizer failed to converge; ``best`` carries the best iterate seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SamplerError(SpconfError, RuntimeError):
    """An MCMC sampler produced a non-finite draw."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)
        self.iteration = iteration


class ConfigError(SpconfError, ValueError):
    """A run configuration failed validation."""
