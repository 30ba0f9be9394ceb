"""
Sub-command handlers. `run_command` routes a validated RunConfig to its
handler the same way for every command: compute, render one artifact, and
report whether the command's acceptance checks passed.
"""

import logging
import math
from typing import Any, Callable, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import config
from disclab.artifacts import dumps_json, render_csv
from disclab.coulomb_mcmc import ChainConfig, conditioned_esd, estimate_G20, limit_G20
from disclab.constrained_spectra import cdf_kappa, rho_kappa
from disclab.errors import UsageError
from disclab.fixtures import get_fixture_store
from disclab.moment_lab import (
    Comparison,
    exact_instance,
    estimate_Gd,
    first_moment_check,
    gaussian_laplace_limit,
    laplace_sum,
    overlap_ratio,
    second_moment_ratio_bruteforce,
    variance_bound_check,
)
from disclab.phase_thresholds import phase_table, tau_f
from disclab.randmat_core import RngStream, sample_goe
from disclab.stats import z_score

logger = logging.getLogger(__name__)

CommandName = Literal["phase", "rho", "esd", "disc", "moments", "laplace", "g2", "bound"]

DEFAULT_GRIDS = {
    "phase": "0.05:1.99:0.01",
    "disc": "0.25:3.0:0.25",
}
ESD_L1_TOL = 0.05
G20_REL_TOL = 0.15

# Fields that change how a run executes but never what it outputs
_EXECUTION_ONLY = {"workers", "out"}


class RunConfig(BaseModel):
    """Everything that determines a run's output, echoed into every artifact"""

    model_config = ConfigDict(frozen=True)

    command: CommandName
    seed: int = Field(ge=0, lt=2**64)
    kappa: Optional[float] = None
    tau: Optional[float] = None
    n: Optional[int] = Field(default=None, ge=1)
    d: Optional[int] = Field(default=None, ge=1)
    q: Optional[float] = None
    c: float = 0.0
    samples: int = Field(default=100_000, ge=2)
    instances: int = Field(default=200, ge=2)
    points: int = Field(default=201, ge=1)
    grid: Optional[str] = None
    fixture: Optional[str] = None
    fast: bool = False
    burn_in: int = Field(default=config.CHAIN_BURN_IN, ge=0)
    sweeps: int = Field(default=config.CHAIN_SWEEPS, ge=1)
    thin: int = Field(default=config.CHAIN_THIN, ge=1)
    chains: int = Field(default=config.CHAIN_CHAINS, ge=1)
    format: Literal["csv", "json"] = "csv"
    out: Optional[str] = None
    workers: Optional[int] = Field(default=None, ge=1)

    def require(self, *names: str) -> None:
        missing = [f"--{name}" for name in names if getattr(self, name) is None]
        if missing:
            raise UsageError(f"'{self.command}' needs {', '.join(missing)}")

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=_EXECUTION_ONLY)

    def chain_config(self) -> ChainConfig:
        return ChainConfig(
            seed=self.seed, burn_in=self.burn_in, sweeps=self.sweeps, thin=self.thin, chains=self.chains
        )


class CommandResult(BaseModel):
    text: str
    passed: bool = True
    extra: Dict[str, str] = Field(default_factory=dict)


def parse_grid(text: str) -> List[float]:
    """'a:b:step' → [a, a+step, ..., b], endpoints included"""
    try:
        a, b, step = (float(part) for part in text.split(":"))
    except ValueError as e:
        raise UsageError(f"grid must look like a:b:step, got {text!r}") from e
    if not step > 0.0 or b < a:
        raise UsageError(f"grid needs step > 0 and a <= b, got {text!r}")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return [round(a + i * step, 12) for i in range(count)]


def _metadata(cfg: RunConfig, **extra: Any) -> Dict[str, Any]:
    meta = {"schema_version": config.SCHEMA_VERSION, "command": cfg.command, "config": cfg.echo()}
    meta.update(extra)
    return meta


def _render(cfg: RunConfig, columns: List[str], rows: List[Dict[str, Any]], **extra: Any) -> str:
    meta = _metadata(cfg, **extra)
    if cfg.format == "json":
        return dumps_json({"metadata": meta, "rows": rows})
    return render_csv(meta, columns, rows)


def cmd_phase(cfg: RunConfig) -> CommandResult:
    grid = parse_grid(cfg.grid or DEFAULT_GRIDS["phase"])
    rows = [row.model_dump(mode="json") for row in phase_table(grid, tau=cfg.tau, workers=cfg.workers)]
    columns = ["kappa", "tau1", "bartau", "tau2", "tau_f", "eta_star", "delta_star", "marker"]
    if cfg.tau is not None:
        columns += ["region", "second_moment_fails"]
    return CommandResult(text=_render(cfg, columns, rows))


def cmd_rho(cfg: RunConfig) -> CommandResult:
    cfg.require("kappa")
    x = np.linspace(-cfg.kappa, cfg.kappa, cfg.points + 2)[1:-1]
    rows = [
        {"x": float(v), "rho": float(r), "cdf": float(f)}
        for v, r, f in zip(x, rho_kappa(cfg.kappa, x), cdf_kappa(cfg.kappa, x))
    ]
    return CommandResult(text=_render(cfg, ["x", "rho", "cdf"], rows))


def cmd_esd(cfg: RunConfig) -> CommandResult:
    cfg.require("kappa", "d")
    report = conditioned_esd(cfg.kappa, cfg.d, cfg.chain_config(), workers=cfg.workers)
    hist = report.histogram
    density = hist.density()
    rows = [
        {"bin_left": hist.edges[i], "bin_right": hist.edges[i + 1], "density": float(density[i])}
        for i in range(len(hist.counts))
    ]
    passed = report.l1_distance <= ESD_L1_TOL
    if not passed:
        logger.warning("ESD L1 distance %.4f exceeds %.2f", report.l1_distance, ESD_L1_TOL)
    diagnostics = {
        "l1_distance": report.l1_distance,
        "symmetry_p_value": report.symmetry_p_value,
        "chains": report.chains,
    }
    text = _render(cfg, ["bin_left", "bin_right", "density"], rows, l1_distance=report.l1_distance)
    return CommandResult(
        text=text,
        passed=passed,
        extra={"diagnostics.json": dumps_json({"metadata": _metadata(cfg), **diagnostics})},
    )


def _disc_families(cfg: RunConfig) -> List[List]:
    if cfg.fixture:
        return [get_fixture_store().load(cfg.fixture)]
    cfg.require("n", "d")
    master = RngStream(seed=cfg.seed)
    families = []
    for i in range(cfg.instances):
        gen = master.child(i).generator()
        families.append([sample_goe(cfg.d, gen) for _ in range(cfg.n)])
    return families


def cmd_disc(cfg: RunConfig) -> CommandResult:
    grid = parse_grid(cfg.grid or DEFAULT_GRIDS["disc"])
    rows = []
    for i, family in enumerate(_disc_families(cfg)):
        result = exact_instance(family, grid, workers=cfg.workers, fast=cfg.fast)
        for kappa, count in zip(result.kappa_grid, result.counts):
            rows.append(
                {"instance": i, "n": result.n, "d": result.d, "kappa": kappa, "Z": count, "disc": result.disc}
            )
    return CommandResult(text=_render(cfg, ["instance", "n", "d", "kappa", "Z", "disc"], rows))


def cmd_moments(cfg: RunConfig) -> CommandResult:
    cfg.require("kappa", "n", "d")
    master = RngStream(seed=cfg.seed)
    report = first_moment_check(
        cfg.kappa, cfg.n, cfg.d, cfg.instances, master.child(0), n_samples=cfg.samples, workers=cfg.workers
    )
    brute = second_moment_ratio_bruteforce(cfg.kappa, cfg.n, cfg.d, cfg.instances, master.child(1), cfg.workers)
    rebuilt = overlap_ratio(cfg.kappa, cfg.n, cfg.d, cfg.samples, master.child(2), cfg.workers)
    z = z_score(brute, rebuilt)
    report.estimates["second_moment_ratio_bruteforce"] = brute
    report.estimates["second_moment_ratio_overlap"] = rebuilt
    report.comparisons["bruteforce_vs_overlap"] = Comparison(z_score=z, passed=abs(z) <= 3.0)
    if cfg.q is not None:
        report.estimates["G_d"] = estimate_Gd(cfg.q, cfg.kappa, cfg.n, cfg.d, cfg.samples, master.child(3), cfg.workers)
    payload = {"metadata": _metadata(cfg), **report.model_dump(mode="json")}
    return CommandResult(text=dumps_json(payload), passed=report.passed)


def cmd_laplace(cfg: RunConfig) -> CommandResult:
    cfg.require("n")
    value = laplace_sum(lambda q: 0.5 * cfg.c * q * q, cfg.n)
    limit = gaussian_laplace_limit(cfg.c) if cfg.c < 1.0 else math.inf
    rows = [{"c": cfg.c, "n": cfg.n, "value": value, "gaussian_limit": limit}]
    return CommandResult(text=_render(cfg, ["c", "n", "value", "gaussian_limit"], rows))


def cmd_g2(cfg: RunConfig) -> CommandResult:
    cfg.require("kappa", "d", "tau")
    observed = estimate_G20(cfg.kappa, cfg.d, cfg.tau, cfg.chain_config(), workers=cfg.workers)
    predicted = tau_f(cfg.kappa) / cfg.tau
    relative = abs(observed.mean - predicted) / abs(predicted) if predicted else math.inf
    payload = {
        "metadata": _metadata(cfg),
        "observed": observed.model_dump(mode="json"),
        "predicted": predicted,
        "limit_G20": limit_G20(cfg.kappa, cfg.tau),
        "relative_error": relative,
        "passed": relative <= G20_REL_TOL,
    }
    return CommandResult(text=dumps_json(payload), passed=relative <= G20_REL_TOL)


def cmd_bound(cfg: RunConfig) -> CommandResult:
    cfg.require("kappa", "d")
    report = variance_bound_check(cfg.kappa, cfg.d, cfg.chain_config(), workers=cfg.workers)
    payload = {"metadata": _metadata(cfg), **report.model_dump(mode="json")}
    return CommandResult(text=dumps_json(payload), passed=report.passed)


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "phase": cmd_phase,
    "rho": cmd_rho,
    "esd": cmd_esd,
    "disc": cmd_disc,
    "moments": cmd_moments,
    "laplace": cmd_laplace,
    "g2": cmd_g2,
    "bound": cmd_bound,
}


def run_command(cfg: RunConfig) -> CommandResult:
    """Route a run to its handler"""
    logger.info("running %s", cfg.command)
    return COMMANDS[cfg.command](cfg)
