"""
The equilibrium density ρ_κ of a GOE matrix conditioned on ‖W‖_op ≤ κ, its
Stieltjes and Hilbert transforms, the log-energy Σ(μ) and the energy
functional I(μ), together with quadrature oracles for each closed form.

Every integral over (-κ, κ) is taken in the variable θ = arcsin(x/κ). The
substitution absorbs the inverse-square-root edge of ρ_κ into dx = κ cos θ dθ,
leaving a bounded trigonometric integrand for Gauss-Legendre.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Literal, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad
from scipy.special import xlogy

from disclab.errors import DomainError, check_margin

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Distance below which a quadrature node counts as sitting on the PV pole
_PV_NODE_GUARD = 1e-9


@lru_cache(maxsize=32)
def _theta_rule(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(nodes)
    half = math.pi / 2.0
    theta = half * x
    weights = half * w
    theta.setflags(write=False)
    weights.setflags(write=False)
    return theta, weights


class QuadratureContext(BaseModel):
    """Gauss-Legendre in θ on (-π/2, π/2); `entropy_cells` sizes the Σ grid"""

    model_config = ConfigDict(frozen=True)

    scheme: Literal["gauss-legendre-theta"] = "gauss-legendre-theta"
    nodes: int = Field(default=400, ge=4)
    entropy_cells: int = Field(default=2000, ge=16)

    def theta_rule(self) -> Tuple[np.ndarray, np.ndarray]:
        return _theta_rule(self.nodes)


DEFAULT_CONTEXT = QuadratureContext()


class SpectralDensity(BaseModel):
    """
    A compactly supported density on [-kappa, kappa].

    `kind` selects the evaluator: the constrained equilibrium density ρ_κ,
    the semicircle √(4-x²)/(2π) coded independently of ρ₂, or the uniform
    density used for log-kernel scaling checks.
    """

    model_config = ConfigDict(frozen=True)

    kappa: float = Field(gt=0.0)
    kind: Literal["constrained", "semicircle", "uniform"] = "constrained"

    @model_validator(mode="after")
    def _check_support(self) -> "SpectralDensity":
        if self.kind == "constrained" and self.kappa > 2.0:
            raise ValueError(f"constrained density needs kappa <= 2, got {self.kappa}")
        if self.kind == "semicircle" and self.kappa != 2.0:
            raise ValueError("semicircle density lives on [-2, 2]")
        return self

    def pdf(self, x: ArrayLike) -> ArrayLike:
        if self.kind == "constrained":
            return rho_kappa(self.kappa, x)
        xs = np.asarray(x, dtype=float)
        if np.any(np.abs(xs) >= self.kappa):
            raise DomainError(f"density evaluated outside (-{self.kappa}, {self.kappa})")
        if self.kind == "semicircle":
            out = np.sqrt(4.0 - xs**2) / (2.0 * math.pi)
        else:
            out = np.full_like(xs, 1.0 / (2.0 * self.kappa))
        return float(out) if out.ndim == 0 else out

    def theta_weight(self, theta: np.ndarray) -> np.ndarray:
        """pdf(κ sin θ)·κ cos θ, bounded on the closed interval"""
        k = self.kappa
        if self.kind == "constrained":
            return (4.0 + k**2 - 2.0 * k**2 * np.sin(theta) ** 2) / (4.0 * math.pi)
        if self.kind == "semicircle":
            return 2.0 * np.cos(theta) ** 2 / math.pi
        return 0.5 * np.cos(theta)

    def theta_cdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "uniform":
            return 0.5 * (np.sin(theta) + 1.0)
        k2 = self.kappa**2 if self.kind == "constrained" else 4.0
        return (4.0 * theta + 0.5 * k2 * np.sin(2.0 * theta)) / (4.0 * math.pi) + 0.5

    def expectation(
        self, fn: Callable[[np.ndarray], np.ndarray], ctx: QuadratureContext = DEFAULT_CONTEXT
    ) -> float:
        """∫ fn(x) μ(dx)"""
        theta, weights = ctx.theta_rule()
        x = self.kappa * np.sin(theta)
        return float(np.sum(weights * fn(x) * self.theta_weight(theta)))

    def moment(self, p: int, ctx: QuadratureContext = DEFAULT_CONTEXT) -> float:
        return self.expectation(lambda x: x**p, ctx)


def constrained_density(kappa: float) -> SpectralDensity:
    return SpectralDensity(kappa=check_margin(kappa))


def semicircle_density() -> SpectralDensity:
    return SpectralDensity(kappa=2.0, kind="semicircle")


def uniform_density(half_width: float) -> SpectralDensity:
    if not half_width > 0.0:
        raise DomainError(f"uniform density needs half_width > 0, got {half_width}")
    return SpectralDensity(kappa=float(half_width), kind="uniform")


def rho_kappa(kappa: float, x: ArrayLike) -> ArrayLike:
    """
    ρ_κ(x) = (4 + κ² - 2x²) / (4π √(κ² - x²)) on (-κ, κ).

    Raises:
        DomainError: if any |x| ≥ κ
    """
    kappa = check_margin(kappa)
    xs = np.asarray(x, dtype=float)
    if np.any(np.abs(xs) >= kappa):
        raise DomainError(f"rho_kappa needs |x| < kappa={kappa}")
    out = (4.0 + kappa**2 - 2.0 * xs**2) / (4.0 * math.pi * np.sqrt(kappa**2 - xs**2))
    return float(out) if out.ndim == 0 else out


def _rho_prime(kappa: float, x: float) -> float:
    s = kappa**2 - x**2
    return (-4.0 * x / math.sqrt(s) + (4.0 + kappa**2 - 2.0 * x**2) * x / s**1.5) / (4.0 * math.pi)


def cdf_kappa(kappa: float, x: ArrayLike) -> ArrayLike:
    """Closed-form CDF of ρ_κ; 0 below -κ and 1 above κ"""
    kappa = check_margin(kappa)
    xs = np.asarray(x, dtype=float)
    theta = np.arcsin(np.clip(xs / kappa, -1.0, 1.0))
    out = constrained_density(kappa).theta_cdf(theta)
    return float(out) if out.ndim == 0 else out


def stieltjes_kappa(kappa: float, z: complex) -> complex:
    """
    G(z) = z/2 + (4 + κ² - 2z²) / (4√(z² - κ²)) for Im z > 0.

    The square root takes the branch with non-negative imaginary part, so that
    -Im G(x + iε)/π → ρ_κ(x) on the support.
    """
    kappa = check_margin(kappa)
    z = complex(z)
    if not z.imag > 0.0:
        raise DomainError(f"stieltjes_kappa needs Im z > 0, got {z}")
    root = np.sqrt(z * z - kappa**2)
    if root.imag < 0.0:
        root = -root
    return complex(z / 2.0 + (4.0 + kappa**2 - 2.0 * z * z) / (4.0 * root))


def _pv_remainder(
    weighted: Callable[[np.ndarray], np.ndarray],
    phi_x: float,
    dphi_x: float,
    x: float,
    kappa: float,
    ctx: QuadratureContext,
) -> float:
    """
    ∫ (φ(y) - φ(x)) / (y - x) dy over (-κ, κ), where `weighted(θ)` returns
    φ(κ sin θ)·κ cos θ. Nodes on the removable pole use φ'(x).
    """
    theta, weights = ctx.theta_rule()
    jac = kappa * np.cos(theta)
    denom = kappa * np.sin(theta) - x
    near = np.abs(denom) < _PV_NODE_GUARD
    safe = np.where(near, 1.0, denom)
    integrand = np.where(near, dphi_x * jac, (weighted(theta) - phi_x * jac) / safe)
    return float(np.sum(weights * integrand))


def _check_interior(kappa: float, x: float) -> Tuple[float, float]:
    kappa = check_margin(kappa)
    x = float(x)
    if not abs(x) < kappa:
        raise DomainError(f"need |x| < kappa={kappa}, got x={x}")
    return kappa, x


def pv_hilbert(kappa: float, x: float, ctx: QuadratureContext = DEFAULT_CONTEXT) -> float:
    """
    P.V. ∫ ρ_κ(y) / (x - y) dy by singularity subtraction. Equals x/2.

    ρ_κ(x) log((κ+x)/(κ-x)) carries the pole; the remainder is a regular
    θ-quadrature.
    """
    kappa, x = _check_interior(kappa, x)
    density = constrained_density(kappa)
    rho_x = rho_kappa(kappa, x)
    remainder = _pv_remainder(
        density.theta_weight, rho_x, _rho_prime(kappa, x), x, kappa, ctx
    )
    return rho_x * math.log((kappa + x) / (kappa - x)) - remainder


def second_moment_rho(kappa: float) -> float:
    """∫ x² ρ_κ(x) dx = κ²(8 - κ²)/16"""
    kappa = check_margin(kappa)
    return kappa**2 * (8.0 - kappa**2) / 16.0


def _cell_log_kernel(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Average of log|x - y| over every pair of cells [lo_i, hi_i] × [lo_j, hi_j]"""

    def antiderivative(t: np.ndarray) -> np.ndarray:
        return 0.5 * xlogy(t * t, np.abs(t)) - 0.75 * t * t

    x0, x1 = lo[:, None], hi[:, None]
    y0, y1 = lo[None, :], hi[None, :]
    total = (
        antiderivative(x1 - y0)
        - antiderivative(x0 - y0)
        - antiderivative(x1 - y1)
        + antiderivative(x0 - y1)
    )
    width = hi - lo
    return total / (width[:, None] * width[None, :])


def entropy_sigma(density: SpectralDensity, ctx: QuadratureContext = DEFAULT_CONTEXT) -> float:
    """
    Σ(μ) = ∬ log|x - y| μ(dx) μ(dy).

    Uniform θ-cells give x-cells that shrink at the edges; each cell carries its
    exact mass and the kernel is integrated exactly over every cell pair against
    a locally flat density, diagonal cells included. Accuracy is about 1e-5 at
    the default 2000 cells.
    """
    cells = ctx.entropy_cells
    edges = np.linspace(-math.pi / 2.0, math.pi / 2.0, cells + 1)
    x_edges = density.kappa * np.sin(edges)
    masses = np.diff(density.theta_cdf(edges))
    kernel = _cell_log_kernel(x_edges[:-1], x_edges[1:])
    return float(masses @ kernel @ masses)


def energy_I(density: SpectralDensity, ctx: QuadratureContext = DEFAULT_CONTEXT) -> float:
    """I(μ) = -½Σ(μ) + ¼∫x² μ(dx) - 3/8; zero at the semicircle"""
    return -0.5 * entropy_sigma(density, ctx) + 0.25 * density.moment(2, ctx) - 3.0 / 8.0


def energy_closed_form(kappa: float) -> float:
    """E_κ = -κ⁴/128 + κ²/8 - ½ log(κ/2) - 3/8, the minimum of I over [-κ, κ]"""
    kappa = check_margin(kappa)
    return -(kappa**4) / 128.0 + kappa**2 / 8.0 - 0.5 * math.log(kappa / 2.0) - 3.0 / 8.0


def _tricomi_numerator(kappa: float, x: float, ctx: QuadratureContext) -> float:
    """P.V. ∫ √(κ² - y²) y / (y - x) dy"""

    def weighted(theta: np.ndarray) -> np.ndarray:
        return kappa**3 * np.sin(theta) * np.cos(theta) ** 2

    root = math.sqrt(kappa**2 - x**2)
    h_x = x * root
    dh_x = root - x * x / root
    return _pv_remainder(weighted, h_x, dh_x, x, kappa, ctx) + h_x * math.log(
        (kappa - x) / (kappa + x)
    )


@lru_cache(maxsize=64)
def tricomi_constant(kappa: float, nodes: int = 200) -> float:
    """
    The free constant C of the inversion, fixed by ∫ρ = 1.

    With dx/√(κ² - x²) = dθ the normalization integral is a plain θ-quadrature
    of the P.V. numerator.
    """
    kappa = check_margin(kappa)
    ctx = QuadratureContext(nodes=nodes)
    theta, weights = ctx.theta_rule()
    numerators = np.array([_tricomi_numerator(kappa, kappa * math.sin(t), ctx) for t in theta])
    return 1.0 - float(np.sum(weights * numerators)) / (2.0 * math.pi**2)


def tricomi_density(kappa: float, x: float, ctx: QuadratureContext = DEFAULT_CONTEXT) -> float:
    """
    ρ_κ reconstructed by inverting the finite Hilbert transform of the
    equilibrium condition P.V.∫ρ(y)/(x-y)dy = x/2 on (-κ, κ):

        ρ(x) = [C/π + P.V.∫√(κ²-y²) y/(y-x) dy / (2π²)] / √(κ² - x²)
    """
    kappa, x = _check_interior(kappa, x)
    numerator = _tricomi_numerator(kappa, x, ctx)
    c = tricomi_constant(kappa)
    return (c / math.pi + numerator / (2.0 * math.pi**2)) / math.sqrt(kappa**2 - x**2)


def log_potential(kappa: float, x: float) -> float:
    """
    ∫ ρ_κ(y) log|x - y| dy by adaptive quadrature in θ with a breakpoint at
    the log singularity. On [-κ, κ] it equals x²/4 + log(κ/2) - κ²/8.
    """
    kappa = check_margin(kappa)
    x = float(x)
    density = constrained_density(kappa)

    def integrand(theta: float) -> float:
        gap = max(abs(x - kappa * math.sin(theta)), 1e-300)
        return float(density.theta_weight(theta)) * math.log(gap)

    points = [math.asin(x / kappa)] if abs(x) < kappa else None
    value, _ = quad(integrand, -math.pi / 2.0, math.pi / 2.0, points=points, limit=200)
    return value


def log_potential_closed_form(kappa: float, x: float) -> float:
    kappa = check_margin(kappa)
    return x * x / 4.0 + math.log(kappa / 2.0) - kappa**2 / 8.0
