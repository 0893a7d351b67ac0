"""Custom exceptions for the NV⁰ simulation toolkit."""

from typing import Optional


class NVSimError(Exception):
    """Base exception for all nvzero errors."""
    pass


class ConfigurationError(NVSimError):
    """Raised when a configuration file, section or preset is invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"[{key}] {message}"
        super().__init__(message)


class ValidationError(NVSimError):
    """Raised when input validation fails."""
    pass


class NormalizationError(ValidationError):
    """Raised when populations do not sum to one."""

    def __init__(self, deficit: float):
        self.deficit = deficit
        super().__init__(
            f"Populations must sum to 1; deficit is {deficit:+.3e}"
        )


class HermiticityError(ValidationError):
    """Raised when a matrix that must be Hermitian is not."""

    def __init__(self, residual: float, tolerance: float):
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"Matrix is not Hermitian: relative residual {residual:.3e} "
            f"exceeds {tolerance:.1e}"
        )


class IntegrationError(NVSimError):
    """Raised when the master-equation integration loses its invariants."""

    def __init__(self, message: str, time_ns: float):
        self.time_ns = time_ns
        super().__init__(f"{message} (at t = {time_ns:.3f} ns)")


class ConvergenceError(NVSimError):
    """Raised when a caller requires a converged fit and did not get one."""

    def __init__(self, model: str, iterations: int):
        self.model = model
        self.iterations = iterations
        super().__init__(
            f"Fit of model '{model}' did not converge after {iterations} evaluations"
        )


class UnderdeterminedFitError(NVSimError):
    """Raised when a fit has fewer independent constraints than parameters."""

    def __init__(self, rank: int, n_params: int, n_observables: int):
        self.rank = rank
        self.n_params = n_params
        self.n_observables = n_observables
        super().__init__(
            f"Under-determined fit: {n_observables} observables, Jacobian rank "
            f"{rank} for {n_params} free parameters"
        )


class InvariantViolationError(NVSimError):
    """Raised when a computed result breaks a physical invariant."""

    def __init__(self, invariant: str, residual: float):
        self.invariant = invariant
        self.residual = residual
        super().__init__(f"Invariant '{invariant}' violated (residual {residual:.3e})")
