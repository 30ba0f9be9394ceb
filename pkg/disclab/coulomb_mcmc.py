"""
Metropolis sampling of the GOE eigenvalue law conditioned on ‖W‖_op ≤ κ.

The target on [-κ, κ]^d is the Coulomb gas

    exp( Σ_{i<j} log|λ_i - λ_j| - (d/4) Σ λ_i² ),

sampled by single-site random-walk moves. Chains run in parallel on
independent streams; the pooled samples feed the conditioned spectral
histogram and the q = 0 moment statistics behind G″_d(0).
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import chi2

import config
from disclab.constrained_spectra import cdf_kappa, second_moment_rho
from disclab.errors import ChainConvergenceError, DomainError, NumericalError, check_margin
from disclab.randmat_core import RngLike, RngStream, as_generator
from disclab.stats import McEstimate, batch_means, batch_statistic, integrated_autocorr_time
from disclab.workers import run_ordered

logger = logging.getLogger(__name__)

# Proposals this close to another coordinate are rejected (log 0)
COINCIDENCE_EPS = 1e-14


class ChainConfig(BaseModel):
    """Settings for one batch of conditioned chains"""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, lt=2**64)
    proposal_std: float = Field(default=0.05, gt=0.0)
    burn_in: int = Field(default=config.CHAIN_BURN_IN, ge=0)
    sweeps: int = Field(default=config.CHAIN_SWEEPS, ge=1)
    thin: int = Field(default=config.CHAIN_THIN, ge=1)
    chains: int = Field(default=config.CHAIN_CHAINS, ge=1)
    target_acceptance: float = Field(default=0.3, gt=0.0, lt=1.0)
    acceptance_band: Tuple[float, float] = (0.2, 0.5)
    adapt_every: int = Field(default=50, ge=1)
    drift_check_every: int = Field(default=1000, ge=1)
    drift_tol: float = Field(default=1e-8, gt=0.0)
    bins: int = Field(default=50, ge=2)

    @model_validator(mode="after")
    def _check_band(self) -> "ChainConfig":
        lo, hi = self.acceptance_band
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"invalid acceptance band {self.acceptance_band}")
        if self.sweeps < 2 * self.thin:
            raise ValueError(f"sweeps={self.sweeps} keeps fewer than two samples at thin={self.thin}")
        return self


class ChainState:
    """Eigenvalue configuration with its cached log-density and move counters"""

    __slots__ = ("lambdas", "log_density", "kappa", "steps", "proposals", "accepted")

    def __init__(self, lambdas: np.ndarray, kappa: float, log_density_value: Optional[float] = None):
        self.lambdas = np.array(lambdas, dtype=np.float64)
        self.kappa = float(kappa)
        if np.any(np.abs(self.lambdas) > self.kappa):
            raise DomainError("chain state has eigenvalues outside [-kappa, kappa]")
        if log_density_value is None:
            log_density_value = log_density(self.lambdas, self.kappa, self.lambdas.size)
        self.log_density = float(log_density_value)
        self.steps = 0
        self.proposals = 0
        self.accepted = 0

    @property
    def d(self) -> int:
        return self.lambdas.size

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def copy(self) -> "ChainState":
        other = ChainState.__new__(ChainState)
        other.lambdas = self.lambdas.copy()
        other.kappa = self.kappa
        other.log_density = self.log_density
        other.steps = self.steps
        other.proposals = self.proposals
        other.accepted = self.accepted
        return other

    @classmethod
    def initial(cls, kappa: float, d: int) -> "ChainState":
        """Chebyshev nodes scaled to 0.95κ: distinct and well inside the box"""
        i = np.arange(d)
        lam = 0.95 * kappa * np.cos(math.pi * (2 * i + 1) / (2 * d))
        return cls(np.sort(lam), kappa)


class EsdHistogram(BaseModel):
    """Pooled eigenvalue counts on uniform bins over [-κ, κ]"""

    model_config = ConfigDict(frozen=True)

    kappa: float
    edges: List[float]
    counts: List[int]
    total: int

    @model_validator(mode="after")
    def _check_counts(self) -> "EsdHistogram":
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("edges must have one more entry than counts")
        if sum(self.counts) != self.total:
            raise ValueError("counts do not sum to total")
        return self

    @classmethod
    def from_samples(cls, values: np.ndarray, kappa: float, bins: int) -> "EsdHistogram":
        edges = np.linspace(-kappa, kappa, bins + 1)
        counts, _ = np.histogram(np.ravel(values), bins=edges)
        return cls(kappa=kappa, edges=edges.tolist(), counts=counts.tolist(), total=int(counts.sum()))

    def merge(self, other: "EsdHistogram") -> "EsdHistogram":
        if self.edges != other.edges:
            raise DomainError("cannot pool histograms with different bins")
        counts = [a + b for a, b in zip(self.counts, other.counts)]
        return EsdHistogram(kappa=self.kappa, edges=self.edges, counts=counts, total=self.total + other.total)

    def density(self) -> np.ndarray:
        widths = np.diff(self.edges)
        return np.asarray(self.counts, dtype=float) / (self.total * widths)

    def l1_distance(self, bin_masses: np.ndarray) -> float:
        """Σ_b |p̂_b - P_b| against the exact masses of a reference law"""
        p_hat = np.asarray(self.counts, dtype=float) / self.total
        return float(np.abs(p_hat - np.asarray(bin_masses)).sum())

    def l1_to_rho(self) -> float:
        return self.l1_distance(np.diff(cdf_kappa(self.kappa, np.asarray(self.edges))))


class ChainRun(BaseModel):
    """Kept samples of one chain and its diagnostics"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    samples: np.ndarray
    acceptance: float
    proposal_std: float
    tau_int: float
    max_drift: float
    stream: List[int]

    def diagnostics(self) -> Dict[str, float]:
        return {
            "acceptance": self.acceptance,
            "proposal_std": self.proposal_std,
            "tau_int_sum_sq": self.tau_int,
            "max_drift": self.max_drift,
            "kept": int(self.samples.shape[0]),
            "stream": self.stream,
        }


def log_density(lambdas: np.ndarray, kappa: float, d: int) -> float:
    """
    Unnormalised Coulomb-gas log-density Σ_{i<j} log|λ_i - λ_j| - (d/4) Σ λ_i².

    Returns -inf for points outside [-κ, κ] or coincident coordinates.
    """
    lam = np.asarray(lambdas, dtype=float)
    if np.any(np.abs(lam) > kappa):
        return -math.inf
    gaps = np.abs(np.subtract.outer(lam, lam))[np.triu_indices(lam.size, 1)]
    if np.any(gaps == 0.0):
        return -math.inf
    return float(np.log(gaps).sum() - 0.25 * d * np.dot(lam, lam))


def mh_sweep(state: ChainState, cfg: ChainConfig, rng: RngLike) -> ChainState:
    """
    One systematic sweep of single-site moves λ_i → λ_i + N(0, σ²), σ = cfg.proposal_std.

    The log-density change of a move is exact and O(d). Returns a new state;
    the input is left untouched.
    """
    gen = as_generator(rng)
    new = state.copy()
    lam = new.lambdas
    d = lam.size
    kappa = new.kappa
    steps = gen.standard_normal(d) * cfg.proposal_std
    uniforms = gen.random(d)
    quarter_d = 0.25 * d

    for i in range(d):
        new.proposals += 1
        old = lam[i]
        prop = old + steps[i]
        if abs(prop) > kappa:
            continue
        gap_new = np.abs(lam - prop)
        gap_old = np.abs(lam - old)
        gap_new[i] = 1.0
        gap_old[i] = 1.0
        if gap_new.min() < COINCIDENCE_EPS:
            continue
        delta = float(np.log(gap_new / gap_old).sum()) - quarter_d * (prop * prop - old * old)
        if delta >= 0.0 or uniforms[i] < math.exp(delta):
            lam[i] = prop
            new.log_density += delta
            new.accepted += 1

    new.steps += 1
    return new


def run_chain(kappa: float, d: int, cfg: ChainConfig, rng: RngStream) -> ChainRun:
    """
    Burn in with proposal adaptation toward the target acceptance, freeze the
    proposal, then keep every `thin`-th production sweep.

    Raises:
        ChainConvergenceError: if production acceptance leaves the band
        NumericalError: if the cached log-density drifts grossly
    """
    kappa = check_margin(kappa)
    if d < 1:
        raise DomainError(f"chain dimension must be >= 1, got {d}")
    gen = rng.generator()
    state = ChainState.initial(kappa, d)
    sigma = min(cfg.proposal_std, 2.0 * kappa)
    sweep_cfg = cfg.model_copy(update={"proposal_std": sigma})
    max_drift = 0.0

    def check_drift(s: ChainState) -> None:
        nonlocal max_drift
        full = log_density(s.lambdas, kappa, d)
        drift = abs(full - s.log_density)
        max_drift = max(max_drift, drift)
        if drift > cfg.drift_tol:
            logger.warning("log-density drift %.3e exceeds %.1e; resyncing", drift, cfg.drift_tol)
        if not math.isfinite(full) or drift > 1e3 * cfg.drift_tol:
            raise NumericalError(f"log-density cache lost track (drift={drift})")
        logger.debug("log-density resync at sweep %d (drift %.2e)", s.steps, drift)
        s.log_density = full

    window_props = window_acc = 0
    for sweep in range(1, cfg.burn_in + 1):
        before_p, before_a = state.proposals, state.accepted
        state = mh_sweep(state, sweep_cfg, gen)
        window_props += state.proposals - before_p
        window_acc += state.accepted - before_a
        if sweep % cfg.adapt_every == 0:
            rate = window_acc / window_props
            sigma = min(2.0 * kappa, sigma * math.exp(rate - cfg.target_acceptance))
            sweep_cfg = cfg.model_copy(update={"proposal_std": sigma})
            window_props = window_acc = 0
        if sweep % cfg.drift_check_every == 0:
            check_drift(state)

    state.proposals = state.accepted = 0
    kept = []
    for sweep in range(1, cfg.sweeps + 1):
        state = mh_sweep(state, sweep_cfg, gen)
        if sweep % cfg.thin == 0:
            kept.append(state.lambdas.copy())
        if sweep % cfg.drift_check_every == 0:
            check_drift(state)
    check_drift(state)

    acceptance = state.acceptance
    samples = np.sort(np.array(kept), axis=1)
    tau = integrated_autocorr_time((samples**2).sum(axis=1))
    lo, hi = cfg.acceptance_band
    if not lo <= acceptance <= hi:
        raise ChainConvergenceError(
            f"acceptance {acceptance:.3f} outside [{lo}, {hi}] after adaptation "
            f"(kappa={kappa}, d={d}, sigma={sigma:.4g}, stream={list(rng.key)})",
            diagnostics={
                "kappa": kappa,
                "d": d,
                "seed": rng.seed,
                "stream": list(rng.key),
                "acceptance": acceptance,
                "acceptance_band": [lo, hi],
                "proposal_std": sigma,
                "tau_int_sum_sq": tau,
                "max_drift": max_drift,
                "kept": len(kept),
            },
        )

    logger.info(
        "chain %s: kappa=%.3f d=%d acceptance=%.3f sigma=%.4f tau_int=%.1f",
        list(rng.key), kappa, d, acceptance, sigma, tau,
    )
    return ChainRun(
        samples=samples,
        acceptance=acceptance,
        proposal_std=sigma,
        tau_int=tau,
        max_drift=max_drift,
        stream=list(rng.key),
    )


def sample_conditioned(kappa: float, d: int, cfg: ChainConfig, workers: Optional[int] = None) -> List[ChainRun]:
    """`cfg.chains` independent chains on streams (seed, c), in chain order"""
    master = RngStream(seed=cfg.seed)
    streams = [master.child(c) for c in range(cfg.chains)]
    return run_ordered(lambda s: run_chain(kappa, d, cfg, s), streams, workers)


class EsdReport(BaseModel):
    histogram: EsdHistogram
    l1_distance: float
    symmetry_p_value: float
    chains: List[Dict]


def conditioned_esd(kappa: float, d: int, cfg: ChainConfig, workers: Optional[int] = None) -> EsdReport:
    """
    Pooled eigenvalue histogram of the conditioned chains with its L1 distance
    to ρ_κ, computed from exact bin masses.
    """
    kappa = check_margin(kappa)
    if d < 2:
        raise DomainError(f"conditioned ESD needs d >= 2, got {d}")
    runs = sample_conditioned(kappa, d, cfg, workers)
    hist = EsdHistogram.from_samples(runs[0].samples, kappa, cfg.bins)
    for run in runs[1:]:
        hist = hist.merge(EsdHistogram.from_samples(run.samples, kappa, cfg.bins))
    _, p_value = symmetry_chi2(hist)
    return EsdReport(
        histogram=hist,
        l1_distance=hist.l1_to_rho(),
        symmetry_p_value=p_value,
        chains=[r.diagnostics() for r in runs],
    )


def symmetry_chi2(hist: EsdHistogram) -> Tuple[float, float]:
    """
    χ² test of x → -x symmetry pairing each bin with its mirror image.
    Correlated chain samples make the p-value optimistic; it is a diagnostic.
    """
    counts = np.asarray(hist.counts, dtype=float)
    half = counts.size // 2
    left, right = counts[:half], counts[::-1][:half]
    total = left + right
    used = total > 0
    if not np.any(used):
        return 0.0, 1.0
    stat = float((((left - right) ** 2)[used] / total[used]).sum())
    return stat, float(chi2.sf(stat, int(used.sum())))


def haar_orthogonal(d: int, rng: RngLike) -> np.ndarray:
    """Haar-distributed O(d) element: QR of a Gaussian matrix with R's diagonal made positive"""
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    return haar_orthogonal_batch(d, 1, rng)[0]


def haar_orthogonal_batch(d: int, size: int, rng: RngLike) -> np.ndarray:
    g = as_generator(rng).standard_normal((size, d, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0.0] = 1.0
    return q * signs[:, None, :]


def haar_moments_exact(d: int) -> Dict[str, float]:
    return {
        "o11_4": 3.0 / (d * (d + 2)),
        "o11_2_o12_2": 1.0 / (d * (d + 2)),
        "o11_2_o22_2": (d + 1) / ((d - 1) * d * (d + 2)) if d > 1 else math.nan,
    }


def haar_fourth_moments(d: int, n_samples: int, rng: RngStream, chunk: int = None) -> Dict[str, McEstimate]:
    """Monte-Carlo E[O₁₁⁴], E[O₁₁²O₁₂²] and E[O₁₁²O₂₂²] from chunked Haar draws"""
    if d < 2:
        raise DomainError("fourth-moment table needs d >= 2")
    chunk = chunk or config.MC_CHUNK
    cols = {"o11_4": [], "o11_2_o12_2": [], "o11_2_o22_2": []}
    for c, start in enumerate(range(0, n_samples, chunk)):
        size = min(chunk, n_samples - start)
        o = haar_orthogonal_batch(d, size, rng.child(c)) ** 2
        cols["o11_4"].append(o[:, 0, 0] ** 2)
        cols["o11_2_o12_2"].append(o[:, 0, 0] * o[:, 0, 1])
        cols["o11_2_o22_2"].append(o[:, 0, 0] * o[:, 1, 1])
    out = {}
    for name, parts in cols.items():
        values = np.concatenate(parts)
        out[name] = McEstimate(
            mean=float(values.mean()),
            stderr=float(values.std(ddof=1) / math.sqrt(values.size)),
            n_samples=values.size,
            seed=rng.seed,
            stream=list(rng.key),
        )
    return out


def haar_variance_combination(d: int, a: float, b: float) -> float:
    """
    Var[Tr WW′] for independent rotation-invariant W, W′ with exchangeable
    eigenvalues, a = E[λ₁²], b = E[λ₁λ₂]:
    [3d²a² + 2d²(d-1)ab]/(d(d+2)) + d(d-1)(d+1)b²/(d+2)
    """
    return (3 * d * d * a * a + 2 * d * d * (d - 1) * a * b) / (d * (d + 2)) + d * (d - 1) * (d + 1) * b * b / (d + 2)


def _moment_columns(runs: List[ChainRun]) -> Tuple[np.ndarray, np.ndarray]:
    samples = np.concatenate([r.samples for r in runs])
    return (samples**2).sum(axis=1), samples.sum(axis=1) ** 2


def _pair_from_moments(d: int):
    def statistic(sum_sq: float, trace_sq: float) -> float:
        return (trace_sq - sum_sq) / (d * (d - 1))

    return statistic


def direct_contraction_samples(runs: List[ChainRun], rng: RngStream) -> np.ndarray:
    """
    Tr[OΛOᵀΛ′] over cross-chain pairs (chain c with chain c+1, same kept index),
    one fresh Haar O per pair.
    """
    if len(runs) < 2:
        raise DomainError("direct contraction needs at least two independent chains")
    kept = min(r.samples.shape[0] for r in runs)
    d = runs[0].samples.shape[1]
    values = []
    for c in range(len(runs)):
        lam = runs[c].samples[:kept]
        lam_p = runs[(c + 1) % len(runs)].samples[:kept]
        u2 = haar_orthogonal_batch(d, kept, rng.child(c)) ** 2
        values.append(np.einsum("kij,ki,kj->k", u2, lam, lam_p))
    return np.concatenate(values)


class ConditionedMoments(BaseModel):
    mean_tr_W2: McEstimate
    mean_lambda_pair: McEstimate
    var_tr_WWp: McEstimate
    var_tr_WWp_direct: McEstimate
    mean_tr_WWp: McEstimate


def conditioned_moments_from_runs(runs: List[ChainRun], seed: int) -> ConditionedMoments:
    d = runs[0].samples.shape[1]
    if d < 2:
        raise DomainError("conditioned moments need d >= 2")
    sum_sq, trace_sq = _moment_columns(runs)
    n = sum_sq.size

    mean_w2, se_w2 = batch_means(sum_sq)
    pair, se_pair = batch_statistic([sum_sq, trace_sq], _pair_from_moments(d))
    var_a, se_var_a = batch_statistic(
        [sum_sq, trace_sq],
        lambda s, t: haar_variance_combination(d, s / d, _pair_from_moments(d)(s, t)),
    )

    contraction = direct_contraction_samples(runs, RngStream(seed=seed, key=(1,)))
    mean_t, se_t = batch_means(contraction)
    var_b, se_var_b = batch_statistic(
        [contraction, contraction**2], lambda m1, m2: m2 - m1 * m1
    )

    def est(mean: float, se: float, count: int) -> McEstimate:
        return McEstimate(mean=mean, stderr=se, n_samples=count, seed=seed)

    return ConditionedMoments(
        mean_tr_W2=est(mean_w2, se_w2, n),
        mean_lambda_pair=est(pair, se_pair, n),
        var_tr_WWp=est(var_a, se_var_a, n),
        var_tr_WWp_direct=est(var_b, se_var_b, contraction.size),
        mean_tr_WWp=est(mean_t, se_t, contraction.size),
    )


def conditioned_moments(kappa: float, d: int, cfg: ChainConfig, workers: Optional[int] = None) -> ConditionedMoments:
    """
    E[Tr W²], E[λ₁λ₂] and Var[Tr WW′] under the conditioned law, the variance
    both from the Haar fourth-moment combination and from direct contraction.
    """
    kappa = check_margin(kappa)
    if d < 2:
        raise DomainError(f"conditioned moments need d >= 2, got {d}")
    return conditioned_moments_from_runs(sample_conditioned(kappa, d, cfg, workers), cfg.seed)


def g20_from_runs(runs: List[ChainRun], tau: float, seed: int) -> McEstimate:
    d = runs[0].samples.shape[1]
    n = tau * d * d
    sum_sq, trace_sq = _moment_columns(runs)

    def g20(s: float, t: float) -> float:
        var = haar_variance_combination(d, s / d, _pair_from_moments(d)(s, t))
        return d * (d + 1) / (2.0 * n) - (d / n) * s + (d * d / (4.0 * n)) * var

    value, se = batch_statistic([sum_sq, trace_sq], g20)
    return McEstimate(mean=value, stderr=se, n_samples=sum_sq.size, seed=seed)


def estimate_G20(
    kappa: float, d: int, tau: float, cfg: ChainConfig, workers: Optional[int] = None
) -> McEstimate:
    """
    G″_d(0) = d(d+1)/(2n) - (d/n) E[Tr W²] + (d²/4n) Var[Tr WW′], n = τd²,
    under the conditioned law. Compare with τ_f(κ)/τ.
    """
    kappa = check_margin(kappa)
    if not tau > 0.0:
        raise DomainError(f"tau must be positive, got {tau}")
    if d < 2:
        raise DomainError(f"G20 needs d >= 2, got {d}")
    return g20_from_runs(sample_conditioned(kappa, d, cfg, workers), tau, cfg.seed)


def limit_G20(kappa: float, tau: float) -> float:
    """(1/τ)[½ - m₂ + m₂²/2] with m₂ = ∫x²ρ_κ; equals τ_f(κ)/τ"""
    if not tau > 0.0:
        raise DomainError(f"tau must be positive, got {tau}")
    m2 = second_moment_rho(kappa)
    return (0.5 - m2 + 0.5 * m2 * m2) / tau
