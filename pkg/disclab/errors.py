"""
Exception hierarchy. Each class carries the exit code the CLI maps it to;
library code only raises, main.py does the mapping.
"""

from typing import Any, Dict, Optional


class DiscLabError(Exception):
    """Base class for every error raised by the package"""

    exit_code = 1

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics


class DomainError(DiscLabError, ValueError):
    """Input outside the mathematical domain of an operation"""

    exit_code = 2


class UsageError(DiscLabError, ValueError):
    """Malformed command line, grid or configuration"""

    exit_code = 2


class DimensionMismatchError(DomainError):
    """Matrices or signings with incompatible shapes"""


class BudgetExceededError(DiscLabError, RuntimeError):
    """Enumeration or sampling budget exceeded"""

    exit_code = 3


class ZeroHitError(DiscLabError, RuntimeError):
    """Rare event never observed, or an estimator with a zero denominator"""

    exit_code = 4


class ChainConvergenceError(DiscLabError, RuntimeError):
    """Metropolis acceptance left the target band after adaptation"""

    exit_code = 5


class NumericalError(DiscLabError, ArithmeticError):
    """Root bracketing failure, NaN propagation or failed consistency check"""

    exit_code = 1


def check_margin(kappa: float, upper: float = 2.0) -> float:
    """
    Validate a margin κ ∈ (0, upper].

    Raises:
        DomainError: if κ is not finite or falls outside the interval
    """
    kappa = float(kappa)
    if not (0.0 < kappa <= upper):
        raise DomainError(f"margin kappa must lie in (0, {upper}], got {kappa}")
    return kappa
