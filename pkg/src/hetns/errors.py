"""Exception hierarchy shared by all modules."""


class HetnsError(Exception):
    """Base class for every error raised by the package."""


class UsageError(HetnsError, ValueError):
    """Inputs are inconsistent (grid mismatch, empty sampling plan, bad range)."""


class DomainError(HetnsError, ValueError):
    """A function was evaluated outside its domain, e.g. negative density."""


class ResolutionError(HetnsError, ValueError):
    """A scale is too small for the grid it is asked to live on."""


class LadderError(HetnsError, ValueError):
    """Artificial-pressure exponents violate the ordering constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class QuadratureError(HetnsError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        self.achieved = achieved
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")


class StepSizeError(HetnsError, ValueError):
    """Requested time step violates the CFL bound."""

    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(f"dt={dt:.6e} exceeds CFL bound {dt_max:.6e}")


class DivergenceError(HetnsError, ArithmeticError):
    """Non-finite values appeared during time stepping.

    ``blame`` maps each right-hand-side term to whether it was finite.
    """

    def __init__(self, t, blame):
        self.t = t
        self.blame = dict(blame)
        bad = [k for k, ok in self.blame.items() if not ok] or ["state"]
        super().__init__(f"non-finite values at t={t:.6e} in: {', '.join(bad)}")


class SchemeError(HetnsError, ArithmeticError):
    """A scheme left its admissible range by more than the allowed slack."""


class ConfigError(HetnsError, ValueError):
    """Aggregated configuration validation failure."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.violations))
