import argparse
import logging
import sys
import time
from typing import List, Optional

from pydantic import ValidationError

import config
from disclab.artifacts import RunManifest, dumps_json, get_artifact_store
from disclab.commands import COMMANDS, RunConfig, run_command
from disclab.errors import DiscLabError, UsageError

logger = logging.getLogger("disclab")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

EXIT_CODES_HELP = """exit codes:
  0  success
  1  acceptance check failed, or numerical failure
  2  invalid arguments or parameter outside its domain
  3  enumeration or sampling budget exceeded
  4  rare event never observed
  5  chain acceptance outside its band (diagnostics are written)
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
    common.add_argument("--kappa", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--n", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--q", type=float)
    common.add_argument("--c", type=float, default=0.0, help="curvature of F(q) = c q^2 / 2 (laplace)")
    common.add_argument("--samples", type=int, default=100_000)
    common.add_argument("--instances", type=int, default=200)
    common.add_argument("--points", type=int, default=201, help="interior points (rho)")
    common.add_argument("--grid", help="kappa grid a:b:step")
    common.add_argument("--fixture", help="binary matrix family to use instead of sampling (disc)")
    common.add_argument("--fast", action="store_true", help="power-iteration norms with a 1%% eigensolve cross-check (disc)")
    common.add_argument("--burn-in", dest="burn_in", type=int, default=config.CHAIN_BURN_IN)
    common.add_argument("--sweeps", type=int, default=config.CHAIN_SWEEPS)
    common.add_argument("--thin", type=int, default=config.CHAIN_THIN)
    common.add_argument("--chains", type=int, default=config.CHAIN_CHAINS)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--out", help="artifact path; standard output when omitted")
    common.add_argument("--workers", type=int, help=f"worker threads (default DISCLAB_WORKERS={config.DISCLAB_WORKERS})")

    parser = argparse.ArgumentParser(
        prog="disclab",
        description="Average-case matrix discrepancy laboratory",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "phase": "phase-diagram thresholds on a kappa grid",
        "rho": "constrained equilibrium density table",
        "esd": "conditioned eigenvalue histogram from Coulomb-gas chains",
        "disc": "exact solution counts and discrepancy by enumeration",
        "moments": "first- and second-moment consistency report",
        "laplace": "binomial Laplace sum for F(q) = c q^2 / 2",
        "g2": "second derivative of G_d at q = 0 against its limit",
        "bound": "log-Sobolev variance bounds at q = 0",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _write_diagnostics(cfg: RunConfig, error: DiscLabError) -> None:
    """Failure diagnostics go to <out>.diagnostics.json, or to stdout without --out"""
    text = dumps_json(
        {
            "metadata": {"schema_version": config.SCHEMA_VERSION, "command": cfg.command, "config": cfg.echo()},
            "error": type(error).__name__,
            "message": str(error),
            "diagnostics": error.diagnostics,
        }
    )
    if cfg.out is None:
        sys.stdout.write(text)
        return
    path = f"{cfg.out}.diagnostics.json"
    get_artifact_store().write_text(path, text)
    logger.error("diagnostics written to %s", path)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    try:
        cfg = RunConfig(**vars(args))
    except ValidationError as e:
        logger.error("invalid arguments: %s", e)
        return EXIT_USAGE

    started = time.perf_counter()
    try:
        result = run_command(cfg)
    except DiscLabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        if e.diagnostics is not None:
            _write_diagnostics(cfg, e)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid parameters: %s", e)
        return UsageError.exit_code

    if cfg.out is None:
        sys.stdout.write(result.text)
    else:
        store = get_artifact_store()
        checksums = store.write_text(cfg.out, result.text)
        for suffix, text in result.extra.items():
            checksums.update(store.write_text(f"{cfg.out}.{suffix}", text))
        manifest = RunManifest(
            command=cfg.command,
            parameters=cfg.echo(),
            seed=cfg.seed,
            wall_time_s=time.perf_counter() - started,
            checksums=checksums,
        )
        store.write_manifest(next(iter(checksums)), manifest)

    if not result.passed:
        logger.error("%s: acceptance checks failed", cfg.command)
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
