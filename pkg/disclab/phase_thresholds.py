"""
Threshold curves of the (κ, τ) phase diagram of average-case matrix discrepancy.

τ = n/d² is the number of matrices per squared dimension and κ the required
margin. Below τ₁(κ) no signing exists w.h.p. (UNSAT), above τ₂(κ) one does
(SAT), and below τ_f(κ) the second moment method provably fails.
All logarithms are natural; division by log 2 happens only where the
threshold itself is defined with it.
"""

import logging
import math
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect, minimize_scalar
from scipy.special import entr, xlog1py
from typing_extensions import Annotated

from disclab.errors import DomainError, NumericalError, UsageError, check_margin
from disclab.workers import run_ordered

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)

# δ_η is bisected far below the 1e-12 contract: g is steep when δ → 1
DELTA_XTOL = 1e-15
ETA_RTOL = 1e-12
ETA_CHECK_RTOL = 1e-9
TAU2_STEP = 1e-3
TAU2_UTOL = 1e-6
# κ = 2 is reported through this limit point
KAPPA_LIMIT = 2.0 - 1e-6
CROSSING_XTOL = 1e-8

Margin = Annotated[float, Field(gt=0.0, le=2.0)]


class Region(str, Enum):
    UNSAT = "UNSAT"
    SAT = "SAT"
    UNKNOWN = "UNKNOWN"


class Classification(BaseModel):
    model_config = ConfigDict(frozen=True)

    region: Region
    second_moment_fails: bool


class PhaseRow(BaseModel):
    """One κ gridpoint with every threshold curve evaluated"""

    model_config = ConfigDict(frozen=True)

    kappa: Margin
    tau1: float = Field(ge=0.0)
    bartau: float
    tau2: float
    tau_f: float = Field(ge=0.0)
    eta_star: float = Field(gt=0.0)
    delta_star: float = Field(gt=0.0, lt=1.0)
    # Filled only when the table is built for a specific τ
    region: Optional[Region] = None
    second_moment_fails: Optional[bool] = None
    marker: str = ""

    @model_validator(mode="after")
    def _check_ordering(self) -> "PhaseRow":
        slack = 1e-9 * max(1.0, abs(self.bartau))
        if self.tau2 > self.bartau + slack:
            raise ValueError(f"tau2={self.tau2} exceeds bartau={self.bartau}")
        if self.tau1 > self.bartau + slack:
            raise ValueError(f"tau1={self.tau1} exceeds bartau={self.bartau}")
        return self


def binary_entropy(p: float) -> float:
    """
    H(p) = -p log p - (1-p) log(1-p) in nats, with 0 log 0 = 0.

    Raises:
        DomainError: if p is outside [0, 1]
    """
    p = float(p)
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"binary entropy needs p in [0, 1], got {p}")
    return float(entr(p) + entr(1.0 - p))


def _entropy_deficit(delta: float) -> float:
    """log 2 - H((1+δ)/2), accurate for δ near 0 and at δ = 1"""
    if delta < 1e-3:
        d2 = delta * delta
        # Σ δ^{2k} / (2k(2k-1))
        return d2 * (0.5 + d2 * (1.0 / 12.0 + d2 * (1.0 / 30.0 + d2 / 56.0)))
    return 0.5 * (xlog1py(1.0 + delta, delta) + xlog1py(1.0 - delta, -delta))


def _first_moment_exponent(kappa: float) -> float:
    """
    -κ⁴/128 + κ²/8 - ½ log(κ/2) - 3/8.

    With t = 1 - κ/2 this equals (2/3)t³ + Σ_{k≥5} t^k/(2k); the series is used
    near κ = 2 where the closed form cancels to below machine precision.
    """
    t = 1.0 - kappa / 2.0
    if 0.0 <= t < 0.1:
        total = 2.0 * t**3 / 3.0
        power = t**5
        for k in range(5, 40):
            total += power / (2 * k)
            power *= t
        return total
    return -(kappa**4) / 128.0 + kappa**2 / 8.0 - 0.5 * math.log(kappa / 2.0) - 3.0 / 8.0


def tau1(kappa: float) -> float:
    """
    First-moment threshold τ₁(κ): below it, E Z_κ → 0 exponentially in d².

    Args:
        kappa: Margin in (0, 2]

    Returns:
        τ₁(κ) ≥ 0, zero exactly at κ = 2
    """
    kappa = check_margin(kappa)
    return _first_moment_exponent(kappa) / LOG2


def tau1_small_kappa_asymptote(kappa: float) -> float:
    """Leading small-κ behaviour -log κ / log 4 of τ₁"""
    kappa = check_margin(kappa)
    return -math.log(kappa) / math.log(4.0)


def rate_opnorm(kappa: float) -> float:
    """
    Left large-deviation rate of the GOE operator norm at scale d²:
    (1/d²) log P[‖W‖_op ≤ κ] → rate_opnorm(κ).

    Accepts any κ > 0; the rate vanishes for κ ≥ 2.
    """
    kappa = float(kappa)
    if not kappa > 0.0:
        raise DomainError(f"rate_opnorm needs kappa > 0, got {kappa}")
    if kappa >= 2.0:
        return 0.0
    return -_first_moment_exponent(kappa)


def tau_f(kappa: float) -> float:
    """Second-moment failure threshold ½(κ²/4 - 1)⁴"""
    kappa = check_margin(kappa)
    return 0.5 * (kappa**2 / 4.0 - 1.0) ** 4


def delta_eta(eta: float) -> float:
    """
    Unique δ ∈ (0,1) with H((1+δ)/2) = (η/(1+η)) log 2, by bisection.

    Solved in the equivalent form log 2 - H((1+δ)/2) = log 2 / (1+η), which
    keeps full precision at both ends of the η range.
    """
    eta = float(eta)
    if not (eta > 0.0 and math.isfinite(eta)):
        raise DomainError(f"delta_eta needs a finite eta > 0, got {eta}")
    rhs = LOG2 / (1.0 + eta)
    return bisect(lambda d: _entropy_deficit(d) - rhs, 0.0, 1.0, xtol=DELTA_XTOL, maxiter=200)


def f_branch(eta: float, kappa: float) -> float:
    """(1+η) τ₁(κ), the first-moment branch of t̃τ"""
    return (1.0 + eta) * tau1(kappa)


def _g_from_delta(delta: float, kappa: float) -> float:
    d = delta
    d2 = d * d
    q = 1.0 - d2
    c0 = (1.0 + d2) / (2.0 * q**2)
    c1 = d * (1.0 + 6.0 * d + 3.0 * d2 + 2.0 * d**3) / (q**3 * (1.0 - d))
    c2 = 2.0 * (1.0 + d) ** 5 / q**4 - (1.0 + 3.0 * d2) / (4.0 * q**3)
    c4 = (1.0 + 3.0 * d2) / (32.0 * q**3)
    return c0 + c1 * kappa + c2 * kappa**2 + c4 * kappa**4


def g_branch(eta: float, kappa: float) -> float:
    """The δ_η-polynomial branch of t̃τ; strictly decreasing in η"""
    kappa = check_margin(kappa)
    return _g_from_delta(delta_eta(eta), kappa)


def ttau(eta: float, kappa: float) -> float:
    """t̃τ(η, κ) = max of the two branches"""
    return max(f_branch(eta, kappa), g_branch(eta, kappa))


def eta_star(kappa: float) -> float:
    """
    The crossing η* of f_κ (increasing from τ₁) and g_κ (decreasing from +∞).

    Raises:
        DomainError: at κ = 2, where f ≡ 0 never meets g
        NumericalError: if no bracket is found or the post-solve check fails
    """
    kappa = check_margin(kappa)
    if kappa >= 2.0:
        raise DomainError(
            "eta_star has no finite root at kappa = 2 (tau1 vanishes); "
            "evaluate on a kappa -> 2 grid instead"
        )

    def gap(eta: float) -> float:
        return f_branch(eta, kappa) - g_branch(eta, kappa)

    lo = hi = 1.0
    while gap(lo) >= 0.0:
        hi, lo = lo, lo / 10.0
        if lo < 1e-15:
            raise NumericalError(f"no lower bracket for eta_star at kappa={kappa}")
    while gap(hi) <= 0.0:
        lo, hi = hi, hi * 10.0
        if hi > 1e40:
            raise NumericalError(f"no upper bracket for eta_star at kappa={kappa}")

    root = bisect(gap, lo, hi, xtol=1e-300, rtol=ETA_RTOL, maxiter=400)

    f_val, g_val = f_branch(root, kappa), g_branch(root, kappa)
    if abs(f_val - g_val) > ETA_CHECK_RTOL * max(abs(f_val), abs(g_val)):
        raise NumericalError(
            f"eta_star post-check failed at kappa={kappa}: f={f_val}, g={g_val}"
        )
    return root


@lru_cache(maxsize=200_000)
def bartau(kappa: float) -> float:
    """τ̄(κ) = min over η of t̃τ(η, κ), attained at η*(κ)"""
    return ttau(eta_star(kappa), kappa)


def _u_grid(kappa: float) -> List[float]:
    count = int(math.floor(kappa / TAU2_STEP + 1e-9))
    grid = [i * TAU2_STEP for i in range(1, count + 1)]
    if not grid or kappa - grid[-1] > 1e-12:
        grid.append(kappa)
    return grid


def tau2(kappa: float) -> float:
    """
    Satisfiability threshold τ₂(κ) = min over u ∈ (0, κ] of τ̄(u).

    A step-1e-3 grid locates the minimiser; an interior minimiser is refined
    by golden-section search to 1e-6 in u. κ = 2 is reported as the value at
    κ = 2 - 1e-6.
    """
    kappa = check_margin(kappa)
    if kappa >= 2.0:
        kappa = KAPPA_LIMIT

    grid = _u_grid(kappa)
    values = np.array([bartau(u) for u in grid])
    i = int(np.argmin(values))
    best = float(values[i])
    if 0 < i < len(grid) - 1:
        try:
            res = minimize_scalar(
                bartau,
                bracket=(grid[i - 1], grid[i], grid[i + 1]),
                method="golden",
                tol=TAU2_UTOL / (2.0 * grid[i]),
            )
            if grid[i - 1] <= res.x <= grid[i + 1]:
                best = min(best, float(res.fun))
        except ValueError:
            # Flat bracket: the grid value already is the minimum to grid accuracy
            logger.debug("golden refinement skipped at u=%.6f", grid[i])
    return best


def crossing_tau1_tauf() -> Tuple[float, float]:
    """
    The two margins where τ₁(κ) = τ_f(κ) inside (0, 2); between them τ₁ < τ_f.

    Raises:
        NumericalError: if the scan grid does not show exactly two sign changes
    """

    def diff(k: float) -> float:
        return tau1(k) - tau_f(k)

    grid = np.linspace(0.01, 1.999, 2000)
    signs = np.sign([diff(k) for k in grid])
    changes = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
    if changes.size != 2:
        raise NumericalError(
            f"expected two tau1/tau_f crossings on the scan grid, found {changes.size}"
        )
    low, high = (
        bisect(diff, float(grid[i]), float(grid[i + 1]), xtol=CROSSING_XTOL)
        for i in changes
    )
    return low, high


def classify(kappa: float, tau: float) -> Classification:
    """
    Region of the point (κ, τ) and whether the second moment method fails there.

    Args:
        kappa: Margin in (0, 2]
        tau: Aspect ratio n/d² ≥ 0

    Returns:
        UNSAT if τ < τ₁(κ), SAT if τ > τ₂(κ), else UNKNOWN; the failure flag
        is τ < τ_f(κ), independent of the region
    """
    kappa = check_margin(kappa)
    tau = float(tau)
    if not tau >= 0.0:
        raise DomainError(f"tau must be non-negative, got {tau}")

    if tau < tau1(kappa):
        region = Region.UNSAT
    elif tau > tau2(kappa):
        region = Region.SAT
    else:
        region = Region.UNKNOWN
    return Classification(region=region, second_moment_fails=tau < tau_f(kappa))


def _row(kappa: float) -> dict:
    eta = eta_star(kappa)
    return {
        "kappa": kappa,
        "tau1": tau1(kappa),
        "bartau": ttau(eta, kappa),
        "tau2": tau2(kappa),
        "tau_f": tau_f(kappa),
        "eta_star": eta,
        "delta_star": delta_eta(eta),
    }


def phase_table(
    kappa_grid: Sequence[float],
    tau: Optional[float] = None,
    workers: Optional[int] = None,
) -> List[PhaseRow]:
    """
    Materialize the phase diagram on an ascending κ grid.

    Args:
        kappa_grid: Ascending margins in (0, 2)
        tau: Optional aspect ratio; when given every row is also classified
        workers: Worker threads for row evaluation (output order is grid order)

    Returns:
        One PhaseRow per κ. τ₂ is carried as a running minimum down the grid,
        which it is by definition.
    """
    grid = [float(k) for k in kappa_grid]
    if not grid:
        raise UsageError("kappa grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("kappa grid must be strictly ascending")
    if not all(0.0 < k < 2.0 for k in grid):
        raise UsageError("kappa grid values must lie in (0, 2)")

    # Warm the shared τ̄ cache once so parallel rows only do lookups
    for u in _u_grid(grid[-1]):
        bartau(u)

    raw = run_ordered(_row, grid, workers)
    logger.info("phase table: %d rows on [%.4f, %.4f]", len(raw), grid[0], grid[-1])

    markers = [""] * len(grid)
    for root in crossing_tau1_tauf():
        if grid[0] <= root <= grid[-1]:
            markers[int(np.argmin([abs(k - root) for k in grid]))] = "tau1=tau_f"

    rows = []
    running = math.inf
    for values, marker in zip(raw, markers):
        running = min(running, values["tau2"])
        values["tau2"] = running
        if tau is not None:
            cls = classify(values["kappa"], tau)
            values["region"] = cls.region
            values["second_moment_fails"] = cls.second_moment_fails
        rows.append(PhaseRow(marker=marker, **values))
    return rows
