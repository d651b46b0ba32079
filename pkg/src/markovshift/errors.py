"""Exception types raised by the library.

Every error carries the offending quantities as attributes so callers (and the
CLI) can report them without parsing messages.
"""
from __future__ import annotations


class MarkovShiftError(Exception):
    """Base class for all library errors."""


class InvalidChain(MarkovShiftError, ValueError):
    """Kernels or initial law violate stochasticity."""


class ZeroMarginal(MarkovShiftError):
    """A conditioning state has probability zero."""

    def __init__(self, j: int, x: int):
        self.j, self.x = j, x
        super().__init__(f"marginal of state {x} at index {j} is zero")


class ZeroReference(MarkovShiftError):
    """A reference law used as a density denominator has a zero entry."""

    def __init__(self, j: int, y: int):
        self.j, self.y = j, y
        super().__init__(f"reference law vanishes at index {j}, state {y}")


class DegenerateBlock(MarkovShiftError):
    """All atoms of a block have probability zero."""


class NotPrimitive(MarkovShiftError):
    """Adjacency matrix has no strictly positive power up to the checked order."""


class HorizonExceeded(MarkovShiftError):
    """A window or index range falls outside the chain horizon."""

    def __init__(self, lo: int, hi: int, horizon: tuple[int, int]):
        self.lo, self.hi, self.horizon = lo, hi, horizon
        super().__init__(f"window [{lo}, {hi}] outside horizon {list(horizon)}")


class WindowTooLarge(MarkovShiftError):
    """Dense table would exceed the configured size cap."""


class BranchJump(MarkovShiftError):
    """Continuous logarithm tracking failed between two grid points."""

    def __init__(self, t: float, step: float):
        self.t, self.step = t, step
        super().__init__(f"phase step {step:.3g} at t={t:.6g} exceeds the half-period guard")


class NoConvergence(MarkovShiftError):
    """An iterative construction did not reach its tolerance."""


class UnstableStencil(MarkovShiftError):
    """Finite-difference estimates disagree under step halving."""

    def __init__(self, estimate: float, error: float, tol: float):
        self.estimate, self.error, self.tol = estimate, error, tol
        super().__init__(f"derivative error estimate {error:.3g} exceeds 10 x tol ({tol:.3g})")


class VarianceTooSmall(MarkovShiftError):
    """Variance is too small (or zero) for the requested statistic."""


class NotLattice(MarkovShiftError):
    """Observable values do not lie on a common arithmetic lattice."""


class SpanExceeded(MarkovShiftError):
    """Lattice index range of the partial sum is too large for exact DP."""

    def __init__(self, span: int, limit: int):
        self.span, self.limit = span, limit
        super().__init__(f"lattice span {span} exceeds {limit}")


class TailUnresolved(MarkovShiftError):
    """Monte Carlo tail probability is below the resolvable level."""


class NonPositiveMatrix(MarkovShiftError):
    """A matrix (or vector) required to be strictly positive is not."""


class NoContraction(MarkovShiftError):
    """Iterated-function contraction cannot be established."""


class GammaCNotLessThanOne(MarkovShiftError):
    """GARCH contraction constant is at least one."""

    def __init__(self, gamma_c: float):
        self.gamma_c = gamma_c
        super().__init__(f"gamma_C = {gamma_c:.6g} >= 1")


class SplitLost(MarkovShiftError):
    """Eigenvalue separation of the tracked spectrum collapsed."""


class Inconclusive(MarkovShiftError):
    """Numerical verdict sits too close to its decision threshold."""


class ConfigError(MarkovShiftError):
    """Experiment configuration failed validation."""

    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.message, self.line = path, message, line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{path}{where}: {message}")
