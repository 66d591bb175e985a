class GeoloopError(Exception):
    """Base class for numerical failures raised by this package."""


class EvaluationDomainError(GeoloopError):
    """Connection coefficients are not finite at the requested point."""


class DomainExitError(GeoloopError):
    """A trajectory left the chart domain before reaching its end time."""

    def __init__(self, t_exit, message=None, partial=None):
        self.t_exit = float(t_exit)
        self.partial = partial
        super().__init__(message or f"trajectory left the chart domain at t={self.t_exit:.6g}")


class NoConvergenceError(GeoloopError):
    def __init__(self, residual, iterations, what="Newton solve"):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(last residual {self.residual:.3e})"
        )


class NumericsError(GeoloopError):
    """Finite-difference step or sample values unusable."""


class RangeError(GeoloopError, ValueError):
    """Query outside the span of a sampled object."""


class CatalogLookupError(KeyError):
    pass
