"""
First- and second-moment experiments on the solution count

    Z_κ = #{ε ∈ {±1}ⁿ : ‖Σ ε_i W_i‖_op ≤ κ√n }

for i.i.d. GOE(d) matrices W_i: exact counts by Gray-code enumeration,
rare-event Monte Carlo for P[‖W‖_op ≤ κ], the overlap function G_d(q), the
binomial Laplace sum and the log-Sobolev variance bound at q = 0.
"""

import logging
import math
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import gammaln, logsumexp

import config
from disclab.coulomb_mcmc import ChainConfig, direct_contraction_samples, sample_conditioned
from disclab.errors import BudgetExceededError, DomainError, NumericalError, ZeroHitError
from disclab.phase_thresholds import Region, binary_entropy, classify, rate_opnorm
from disclab.randmat_core import (
    RngStream,
    Signing,
    SymMatrix,
    batch_op_norms,
    correlated_pair_batch,
    power_iteration,
    sample_goe,
    sample_goe_batch,
)
from disclab.stats import (
    McEstimate,
    batch_statistic,
    binomial_estimate,
    jackknife_ratio_of_moments,
    sample_estimate,
    z_score,
)
from disclab.workers import run_ordered

logger = logging.getLogger(__name__)

__all__ = [
    "McEstimate",
    "InstanceResult",
    "LabReport",
    "Comparison",
    "gray_signings",
    "estimate_prob_opnorm",
    "exact_instance",
    "first_moment_check",
    "estimate_Gd",
    "overlap_ratio",
    "second_moment_ratio_bruteforce",
    "laplace_sum",
    "log_laplace_sum",
    "binomial_entropy_bounds",
    "laplace_conditions",
    "gaussian_laplace_limit",
    "variance_bound_check",
    "phase_empirics",
]

MAX_ENUMERATION_N = 26
POWER_TOL = 1e-12
POWER_CHECK_EVERY = 100
POWER_CHECK_RTOL = 1e-5
POWER_MAX_ITER = 2000
PASS_Z = 3.0


class Comparison(BaseModel):
    z_score: float
    passed: bool
    detail: str = ""


class LabReport(BaseModel):
    """JSON-ready report: inputs, seeds, estimates and pass/fail comparisons"""

    operation: str
    inputs: Dict[str, Any]
    seeds: Dict[str, Any]
    estimates: Dict[str, McEstimate] = Field(default_factory=dict)
    comparisons: Dict[str, Comparison] = Field(default_factory=dict)
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.comparisons.values())


class InstanceResult(BaseModel):
    """Exact solution counts of one matrix family on a κ grid"""

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    d: int = Field(ge=1)
    kappa_grid: List[float]
    counts: List[int]
    disc: float = Field(ge=0.0)
    argmin: List[int]

    @model_validator(mode="after")
    def _check_counts(self) -> "InstanceResult":
        if len(self.counts) != len(self.kappa_grid):
            raise ValueError("one count per kappa required")
        if any(c % 2 for c in self.counts):
            raise ValueError("solution counts must be even")
        if any(b < a for a, b in zip(self.counts, self.counts[1:])):
            raise ValueError("solution counts must be non-decreasing in kappa")
        return self


def _seeds(rng: RngStream) -> Dict[str, Any]:
    return {"seed": rng.seed, "stream": list(rng.key)}


def gray_signings(n: int) -> Iterator[Tuple[int, int]]:
    """
    Canonical signings (ε₁ = +1) in reflected Gray-code order.

    Yields (code, flipped) where bit j of `code` set means ε_{j+2} = -1 and
    `flipped` is the bit that changed from the previous code (-1 first).
    """
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    yield 0, -1
    for k in range(1, 1 << (n - 1)):
        yield k ^ (k >> 1), (k & -k).bit_length() - 1


def signing_from_code(code: int, n: int) -> Signing:
    eps = [1] + [-1 if (code >> j) & 1 else 1 for j in range(n - 1)]
    return Signing(eps)


def _chunk_sums(stack: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Running sums Σ ε_i W_i for Gray indices k ∈ [start, stop), re-anchored at `start`"""
    n = stack.shape[0]
    k = np.arange(start, stop, dtype=np.int64)
    gray = k ^ (k >> 1)
    anchor = signing_from_code(int(gray[0]), n).eps.astype(np.float64)
    s0 = np.tensordot(anchor, stack, axes=1)
    if stop - start == 1:
        return s0[None]
    ks = k[1:]
    bit = np.log2(ks & -ks).astype(np.int64)
    now_negative = (gray[1:] >> bit) & 1
    coeff = np.where(now_negative == 1, -2.0, 2.0)
    steps = coeff[:, None, None] * stack[bit + 1]
    return np.concatenate([s0[None], s0[None] + np.cumsum(steps, axis=0)])


def _power_norms(sums: np.ndarray, start: int) -> np.ndarray:
    """
    Norms by power iteration warm-started from the previous step's iterate.
    Every POWER_CHECK_EVERY-th Gray index is re-solved with eigvalsh, and so
    is any step where the iteration stalls.

    Raises:
        NumericalError: if a checked step disagrees with the full eigensolve
    """
    d = sums.shape[1]
    v = np.full(d, 1.0 / math.sqrt(d))
    norms = np.empty(sums.shape[0])
    for j, s in enumerate(sums):
        try:
            norms[j], v = power_iteration(s, v, tol=POWER_TOL, max_iter=POWER_MAX_ITER)
        except NumericalError:
            # |λ_max| and |λ_min| nearly tied
            logger.debug("power iteration stalled at Gray index %d; using eigensolve", start + j)
            norms[j] = batch_op_norms(s[None])[0]
            continue
        if (start + j) % POWER_CHECK_EVERY == 0:
            full = float(batch_op_norms(s[None])[0])
            if abs(norms[j] - full) > POWER_CHECK_RTOL * max(1.0, full):
                raise NumericalError(
                    f"power iteration norm {norms[j]!r} disagrees with eigensolve {full!r} at Gray index {start + j}"
                )
    return norms


def _chunk_stats(
    stack: np.ndarray, kappas: np.ndarray, start: int, stop: int, fast: bool = False
) -> Tuple[np.ndarray, float, int]:
    """Counts per κ, minimum margin and its Gray index over k ∈ [start, stop)"""
    n = stack.shape[0]
    sums = _chunk_sums(stack, start, stop)
    norms = _power_norms(sums, start) if fast else batch_op_norms(sums)
    margins = norms / math.sqrt(n)
    counts = (margins[:, None] <= kappas[None, :]).sum(axis=0)
    i = int(np.argmin(margins))
    return counts, float(margins[i]), start + i


def exact_instance(
    Ws: Sequence[SymMatrix],
    kappa_grid: Sequence[float],
    workers: Optional[int] = None,
    chunk: int = None,
    fast: bool = False,
) -> InstanceResult:
    """
    Exact Z_κ for every κ on the grid, plus disc = min margin and its signing.

    Walks the 2ⁿ⁻¹ signings with ε₁ = +1 in Gray-code order; each step adds
    ±2W_i to the running sum. Chunks re-anchor the sum exactly and are solved
    as one batched eigensolve. Counts are doubled for ε ↔ -ε.

    With `fast`, each step's norm comes from a warm-started power iteration
    instead, cross-checked against the eigensolve on 1% of steps.

    Raises:
        BudgetExceededError: if n > 26
        NumericalError: if the fast path fails its cross-check
    """
    n = len(Ws)
    if n < 1:
        raise DomainError("empty matrix family")
    if n > MAX_ENUMERATION_N:
        raise BudgetExceededError(f"enumeration over 2^{n - 1} signings exceeds the n <= {MAX_ENUMERATION_N} budget")
    d = Ws[0].d
    if any(W.d != d for W in Ws):
        raise DomainError("all matrices in a family must share d")
    grid = [float(k) for k in kappa_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("kappa grid must be non-empty and strictly ascending")

    stack = np.stack([W.array for W in Ws])
    kappas = np.asarray(grid)
    chunk = chunk or config.ENUM_CHUNK
    total = 1 << (n - 1)
    spans = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
    parts = run_ordered(lambda span: _chunk_stats(stack, kappas, *span, fast=fast), spans, workers)

    counts = sum(p[0] for p in parts)
    best = min(parts, key=lambda p: (p[1], p[2]))
    k = best[2]
    argmin = signing_from_code(k ^ (k >> 1), n)
    return InstanceResult(
        n=n,
        d=d,
        kappa_grid=grid,
        counts=[2 * int(c) for c in counts],
        disc=best[1],
        argmin=argmin.eps.tolist(),
    )


def _sample_family(n: int, d: int, rng: RngStream) -> List[SymMatrix]:
    gen = rng.generator()
    return [sample_goe(d, gen) for _ in range(n)]


def estimate_prob_opnorm(
    kappa: float,
    d: int,
    n_samples: int,
    rng: RngStream,
    workers: Optional[int] = None,
    chunk: int = None,
) -> McEstimate:
    """
    Fraction of GOE(d) draws with ‖W‖_op ≤ κ, with a binomial error bar.

    Batches of `chunk` draws run on streams rng/c. Zero hits give a one-sided
    95% bound instead of an interval.
    """
    if not kappa > 0.0:
        raise DomainError(f"kappa must be positive, got {kappa}")
    if n_samples < 2:
        raise DomainError(f"need at least 2 samples, got {n_samples}")
    predicted = rate_opnorm(kappa) * d * d
    if predicted < math.log(10.0 / n_samples):
        logger.warning(
            "P[||W|| <= %.3f] at d=%d is about exp(%.1f): too rare for %d direct draws",
            kappa, d, predicted, n_samples,
        )
    chunk = chunk or config.MC_CHUNK
    spans = list(enumerate(range(0, n_samples, chunk)))

    def hits(task: Tuple[int, int]) -> int:
        c, start = task
        size = min(chunk, n_samples - start)
        norms = batch_op_norms(sample_goe_batch(d, size, rng.child(c)))
        return int((norms <= kappa).sum())

    total_hits = sum(run_ordered(hits, spans, workers))
    return binomial_estimate(total_hits, n_samples, seed=rng.seed, stream=rng.key)


def first_moment_check(
    kappa: float,
    n: int,
    d: int,
    n_instances: int,
    rng: RngStream,
    n_samples: int = 100_000,
    workers: Optional[int] = None,
) -> LabReport:
    """
    Compare the mean exact Z_κ over random instances with 2ⁿ P[‖W‖_op ≤ κ].
    Instances use streams rng/0/i, the probability estimate rng/1.
    """
    if n_instances < 2:
        raise DomainError("need at least two instances")
    inst_rng = rng.child(0)
    z_values = np.array(
        [
            exact_instance(_sample_family(n, d, inst_rng.child(i)), [kappa], workers).counts[0]
            for i in range(n_instances)
        ],
        dtype=float,
    )
    if np.all(z_values == z_values[0]):
        exact = McEstimate(mean=float(z_values[0]), stderr=0.0, n_samples=n_instances, seed=rng.seed, stream=list(inst_rng.key))
    else:
        exact = sample_estimate(z_values, seed=rng.seed, stream=inst_rng.key)
    predicted = estimate_prob_opnorm(kappa, d, n_samples, rng.child(1), workers).scaled(2.0**n)

    z = z_score(exact, predicted)
    logger.info("first moment: exact %.4g +- %.2g vs predicted %.4g +- %.2g (z=%.2f)",
                exact.mean, exact.stderr, predicted.mean, predicted.stderr, z)
    return LabReport(
        operation="first_moment_check",
        inputs={"kappa": kappa, "n": n, "d": d, "instances": n_instances, "samples": n_samples},
        seeds=_seeds(rng),
        estimates={"exact_mean_Z": exact, "predicted_mean_Z": predicted},
        comparisons={"exact_vs_predicted": Comparison(z_score=z, passed=abs(z) <= PASS_Z)},
    )


def _joint_hits(q: float, kappa: float, d: int, n_samples: int, rng: RngStream, workers: Optional[int]) -> int:
    chunk = config.MC_CHUNK
    spans = list(enumerate(range(0, n_samples, chunk)))

    def hits(task: Tuple[int, int]) -> int:
        c, start = task
        size = min(chunk, n_samples - start)
        w, y = correlated_pair_batch(q, d, size, rng.child(c))
        both = (batch_op_norms(w) <= kappa) & (batch_op_norms(y) <= kappa)
        return int(both.sum())

    return sum(run_ordered(hits, spans, workers))


def _log_prob(est: McEstimate, what: str) -> Tuple[float, float]:
    """log p̂ and its delta-method standard error"""
    if est.zero_hit or est.mean <= 0.0:
        raise ZeroHitError(f"{what}: no hits in {est.n_samples} draws (95% upper bound {est.upper_bound_95:.3g})")
    return math.log(est.mean), est.stderr / est.mean


def estimate_Gd(
    q: float,
    kappa: float,
    n: int,
    d: int,
    n_samples: int,
    rng: RngStream,
    workers: Optional[int] = None,
) -> McEstimate:
    """
    Ĝ_d(q) = (1/n)[log p̂_joint(q) - 2 log p̂_single].

    p̂_joint counts correlated pairs (stream rng/0) with both norms ≤ κ;
    p̂_single comes from an independent stream rng/1.

    Raises:
        ZeroHitError: if either event was never observed
    """
    q = float(q)
    if not abs(q) < 1.0:
        raise DomainError(f"overlap must satisfy |q| < 1, got {q}")
    joint = binomial_estimate(_joint_hits(q, kappa, d, n_samples, rng.child(0), workers), n_samples, rng.seed, rng.child(0).key)
    single = estimate_prob_opnorm(kappa, d, n_samples, rng.child(1), workers)
    log_j, se_j = _log_prob(joint, "joint event")
    log_s, se_s = _log_prob(single, "single event")
    return McEstimate(
        mean=(log_j - 2.0 * log_s) / n,
        stderr=math.sqrt(se_j**2 + 4.0 * se_s**2) / n,
        n_samples=n_samples,
        seed=rng.seed,
        stream=list(rng.key),
    )


def overlap_ratio(
    kappa: float,
    n: int,
    d: int,
    n_samples: int,
    rng: RngStream,
    workers: Optional[int] = None,
) -> McEstimate:
    """
    E[Z²]/E[Z]² rebuilt from the overlap decomposition
    (1/2ⁿ) Σ_l C(n,l) exp(n Ĝ_d(q_l)), q_l = 2l/n - 1.

    Each interior q_l has its own joint estimate (stream rng/0/l); the
    endpoints q = ±1 use P_joint = P_single exactly. p̂_single comes from rng/1.
    """
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    single = estimate_prob_opnorm(kappa, d, n_samples, rng.child(1), workers)
    log_s, _ = _log_prob(single, "single event")
    p_s = single.mean

    grid = np.array([2.0 * l / n - 1.0 for l in range(n + 1)])
    p_joint = np.empty(n + 1)
    se_joint = np.zeros(n + 1)
    p_joint[0] = p_joint[n] = p_s
    for l in range(1, n):
        stream = rng.child(0).child(l)
        est = binomial_estimate(_joint_hits(grid[l], kappa, d, n_samples, stream, workers), n_samples, rng.seed, stream.key)
        p_joint[l], se_joint[l] = est.mean, est.stderr

    with np.errstate(divide="ignore"):
        g_table = (np.log(p_joint) - 2.0 * log_s) / n
    # F is only ever evaluated on the q_l grid
    value = laplace_sum(lambda q: g_table[np.rint((q + 1.0) * n / 2.0).astype(int)], n)

    weights = np.exp(_log_binomial_weights(n))
    interior = slice(1, n)
    d_joint = weights[interior] / p_s**2
    d_single = -2.0 * np.dot(weights[interior], p_joint[interior]) / p_s**3 - (weights[0] + weights[n]) / p_s**2
    stderr = math.sqrt(float(np.sum((d_joint * se_joint[interior]) ** 2)) + (d_single * single.stderr) ** 2)
    return McEstimate(mean=value, stderr=stderr, n_samples=n_samples, seed=rng.seed, stream=list(rng.key))


def second_moment_ratio_bruteforce(
    kappa: float,
    n: int,
    d: int,
    n_instances: int,
    rng: RngStream,
    workers: Optional[int] = None,
) -> McEstimate:
    """mean(Z²)/mean(Z)² over exact instances on streams rng/i, jackknife error bars"""
    z_values = np.array(
        [
            exact_instance(_sample_family(n, d, rng.child(i)), [kappa], workers).counts[0]
            for i in range(n_instances)
        ],
        dtype=float,
    )
    ratio, stderr = jackknife_ratio_of_moments(z_values)
    return McEstimate(mean=ratio, stderr=stderr, n_samples=n_instances, seed=rng.seed, stream=list(rng.key))


def _log_binomials(n: int) -> np.ndarray:
    """log C(n, l) for l = 0..n from log-gamma"""
    l = np.arange(n + 1, dtype=float)
    return gammaln(n + 1.0) - gammaln(l + 1.0) - gammaln(n - l + 1.0)


def _log_binomial_weights(n: int) -> np.ndarray:
    """log(C(n, l) / 2ⁿ), normalised so the weights sum to one in floating point"""
    log_c = _log_binomials(n)
    # Σ C(n, l) = 2ⁿ exactly; dividing by the computed total cancels the shared gammaln(n+1) rounding
    return log_c - logsumexp(log_c)


def log_laplace_sum(F: Callable[[np.ndarray], np.ndarray], n: int) -> float:
    """log[(1/2ⁿ) Σ_l C(n,l) exp(n F(q_l))], evaluated entirely in log-space"""
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    q = 2.0 * np.arange(n + 1) / n - 1.0
    values = np.broadcast_to(np.asarray(F(q), dtype=float), q.shape)
    if np.any(np.isnan(values)):
        raise NumericalError("F returned NaN on the overlap grid")
    return float(logsumexp(_log_binomial_weights(n) + n * values))


def laplace_sum(F: Callable[[np.ndarray], np.ndarray], n: int) -> float:
    """(1/2ⁿ) Σ_{l=0..n} C(n,l) exp(n F(q_l)), q_l = 2l/n - 1"""
    return math.exp(log_laplace_sum(F, n))


def binomial_entropy_bounds(n: int) -> List[bool]:
    """Per l: e^{nH(l/n)}/(n+1) ≤ C(n,l) ≤ e^{nH(l/n)}, checked in log-space"""
    log_c = _log_binomials(n)
    slack = 1e-9 * max(1.0, float(n))
    out = []
    for l in range(n + 1):
        nh = n * binary_entropy(l / n)
        out.append(nh - math.log(n + 1.0) - slack <= log_c[l] <= nh + slack)
    return out


class LaplaceConditions(BaseModel):
    curvature: float
    gap: float
    satisfied: bool


def laplace_conditions(F: Callable[[np.ndarray], np.ndarray], delta: float, grid_points: int = 4001) -> LaplaceConditions:
    """
    Numeric check of the discrete Laplace hypotheses for F on [-1, 1]:
    max |F″| on |q| ≤ δ (central differences) must stay below 1, the curvature
    of H((1+q)/2) at 0, and sup_{|q|≥δ}[F(q) + H((1+q)/2)] - log 2 must be < 0.
    """
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    q = np.linspace(-1.0, 1.0, grid_points)
    f = np.broadcast_to(np.asarray(F(q), dtype=float), q.shape)
    h = q[1] - q[0]
    inner = np.abs(q[1:-1]) <= delta
    second = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
    curvature = float(np.max(np.abs(second[inner])))
    outer = np.abs(q) >= delta
    entropy = np.array([binary_entropy((1.0 + v) / 2.0) for v in q[outer]])
    gap = float(np.max(f[outer] + entropy)) - math.log(2.0)
    return LaplaceConditions(curvature=curvature, gap=gap, satisfied=curvature < 1.0 and gap < 0.0)


def gaussian_laplace_limit(c: float) -> float:
    """n → ∞ limit of laplace_sum for F(q) = c q²/2"""
    if not c < 1.0:
        raise DomainError(f"Gaussian limit needs c < 1, got {c}")
    return (1.0 - c) ** -0.5


def variance_bound_check(
    kappa: float, d: int, cfg: ChainConfig, workers: Optional[int] = None
) -> LabReport:
    """
    Empirical Var[Tr P] under the conditioned law at q = 0 against the
    log-Sobolev bound 2(1+q)(Σ_p p κ^{p-1}|a_p|)² for P ∈ {X, X², XY}.
    """
    runs = sample_conditioned(kappa, d, cfg, workers)
    samples = np.concatenate([r.samples for r in runs])
    statistics = {
        "X": samples.sum(axis=1),
        "X2": (samples**2).sum(axis=1),
        "XY": direct_contraction_samples(runs, RngStream(seed=cfg.seed, key=(2,))),
    }
    bounds = {"X": 2.0, "X2": 2.0 * (2.0 * kappa) ** 2, "XY": 2.0 * (2.0 * kappa) ** 2}

    estimates, comparisons, rows = {}, {}, []
    for name, values in statistics.items():
        var, se = batch_statistic([values, values**2], lambda m1, m2: m2 - m1 * m1)
        estimates[f"var_{name}"] = McEstimate(mean=var, stderr=se, n_samples=values.size, seed=cfg.seed)
        bound = bounds[name]
        z = (var - bound) / se if se > 0 else (0.0 if var == bound else math.copysign(math.inf, var - bound))
        comparisons[f"bound_{name}"] = Comparison(z_score=z, passed=var <= bound, detail=f"bound={bound}")
        rows.append({"polynomial": name, "variance": var, "stderr": se, "bound": bound, "margin": bound - var})
    return LabReport(
        operation="variance_bound_check",
        inputs={"kappa": kappa, "d": d, "q": 0.0, "chain": cfg.model_dump()},
        seeds={"seed": cfg.seed},
        estimates=estimates,
        comparisons=comparisons,
        rows=rows,
        notes=["the bound is not claimed tight"],
    )


def phase_empirics(
    kappa: float,
    tau: float,
    d_list: Sequence[int],
    n_instances: int,
    rng: RngStream,
    workers: Optional[int] = None,
) -> LabReport:
    """
    Fraction of random instances with disc ≤ κ at n = round(τd²), per d,
    annotated with the asymptotic region of (κ, τ).
    """
    if n_instances < 2:
        raise DomainError("need at least two instances")
    region: Optional[Region] = classify(kappa, tau).region if kappa <= 2.0 else None
    estimates, rows = {}, []
    for d in d_list:
        n = int(round(tau * d * d))
        if n < 1:
            raise DomainError(f"tau={tau} gives n=0 at d={d}")
        if n > MAX_ENUMERATION_N:
            raise BudgetExceededError(f"n={n} at d={d} exceeds the n <= {MAX_ENUMERATION_N} budget")
        stream = rng.child(d)
        sat = sum(
            exact_instance(_sample_family(n, d, stream.child(i)), [kappa], workers).disc <= kappa
            for i in range(n_instances)
        )
        est = binomial_estimate(sat, n_instances, rng.seed, stream.key)
        estimates[f"sat_frequency_d{d}"] = est
        rows.append({"d": d, "n": n, "sat_frequency": est.mean, "stderr": est.stderr})
    notes = ["finite-size frequencies: no tolerance is claimed at d <= 5"]
    if region is None:
        notes.append("kappa > 2: the norm constraint is asymptotically inactive")
    return LabReport(
        operation="phase_empirics",
        inputs={"kappa": kappa, "tau": tau, "d_list": list(d_list), "instances": n_instances},
        seeds=_seeds(rng),
        estimates=estimates,
        rows=rows,
        notes=notes + ([f"asymptotic region: {region.value}"] if region is not None else []),
    )
