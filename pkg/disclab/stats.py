"""
Monte-Carlo bookkeeping shared by the sampling modules: the McEstimate record,
binomial and batch-means error bars, the jackknife, one-sided rare-event bounds
and autocorrelation times.
"""

import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from disclab.errors import ZeroHitError


class McEstimate(BaseModel):
    """A Monte-Carlo scalar estimate with its provenance"""

    model_config = ConfigDict(frozen=True)

    mean: float
    stderr: float = Field(ge=0.0)
    n_samples: int = Field(ge=0)
    seed: Optional[int] = None
    stream: List[int] = Field(default_factory=list)
    zero_hit: bool = False
    # One-sided 95% upper bound, reported instead of a two-sided interval
    # when the event was never observed
    upper_bound_95: Optional[float] = None

    def scaled(self, factor: float) -> "McEstimate":
        """Return the estimate of factor * X"""
        return self.model_copy(
            update={"mean": factor * self.mean, "stderr": abs(factor) * self.stderr}
        )


def rare_event_upper_95(total: int) -> float:
    """Exact one-sided 95% upper bound on a probability after 0 hits in `total` draws"""
    if total <= 0:
        return 1.0
    return 1.0 - math.exp(math.log(0.05) / float(total))


def binomial_estimate(
    hits: int,
    total: int,
    seed: Optional[int] = None,
    stream: Sequence[int] = (),
) -> McEstimate:
    """
    Hit-fraction estimate with the sample-standard-deviation error bar.

    Args:
        hits: Number of draws where the event happened
        total: Number of draws
        seed: Master seed that produced the draws
        stream: Stream key that produced the draws

    Returns:
        McEstimate; zero-hit results carry `zero_hit` and a one-sided bound
    """
    if total < 2:
        raise ValueError(f"need at least 2 draws for a standard error, got {total}")
    p = hits / total
    stderr = math.sqrt(p * (1.0 - p) / (total - 1))
    return McEstimate(
        mean=p,
        stderr=stderr,
        n_samples=total,
        seed=seed,
        stream=list(stream),
        zero_hit=hits == 0,
        upper_bound_95=rare_event_upper_95(total) if hits == 0 else None,
    )


def sample_estimate(
    values: np.ndarray,
    seed: Optional[int] = None,
    stream: Sequence[int] = (),
) -> McEstimate:
    """Mean of i.i.d. values with stderr = std(ddof=1)/sqrt(n)"""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError(f"need at least 2 samples for a standard error, got {n}")
    return McEstimate(
        mean=float(values.mean()),
        stderr=float(values.std(ddof=1) / math.sqrt(n)),
        n_samples=n,
        seed=seed,
        stream=list(stream),
    )


def batch_means(values: np.ndarray, n_batches: int = 20) -> Tuple[float, float]:
    """
    Mean and standard error of a correlated series by non-overlapping batches.

    Returns:
        (mean, stderr) where stderr is the spread of batch means / sqrt(n_batches)
    """
    values = np.asarray(values, dtype=float)
    n_batches = min(n_batches, values.size)
    if n_batches < 2:
        raise ValueError("batch means need at least two values")
    usable = (values.size // n_batches) * n_batches
    batches = values[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(values.mean()), float(batches.std(ddof=1) / math.sqrt(n_batches))


def batch_statistic(
    columns: Sequence[np.ndarray],
    statistic: Callable[..., float],
    n_batches: int = 20,
) -> Tuple[float, float]:
    """
    Evaluate a nonlinear statistic of column means on the full series and on
    each batch; the batch spread gives the standard error.

    Args:
        columns: Equal-length series whose means feed `statistic`
        statistic: Function of the column means
        n_batches: Number of non-overlapping batches

    Returns:
        (value on the full series, stderr from batch spread)
    """
    columns = [np.asarray(c, dtype=float) for c in columns]
    size = columns[0].size
    n_batches = min(n_batches, size)
    if n_batches < 2:
        raise ValueError("batch statistic needs at least two values")
    usable = (size // n_batches) * n_batches
    full = statistic(*[c.mean() for c in columns])
    per_batch = np.array(
        [
            statistic(*[b.mean() for b in parts])
            for parts in zip(*[c[:usable].reshape(n_batches, -1) for c in columns])
        ]
    )
    return float(full), float(per_batch.std(ddof=1) / math.sqrt(n_batches))


def jackknife_ratio_of_moments(z: np.ndarray) -> Tuple[float, float]:
    """
    Jackknife estimate of mean(z^2) / mean(z)^2.

    Raises:
        ZeroHitError: if mean(z) vanishes on the full sample
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    if n < 2:
        raise ValueError("jackknife needs at least two instances")
    s1, s2 = z.sum(), (z**2).sum()
    if s1 == 0.0:
        raise ZeroHitError("mean count is zero on every instance; ratio undefined")
    full = (s2 / n) / (s1 / n) ** 2
    loo_s1 = s1 - z
    loo_s2 = s2 - z**2
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = ((loo_s2 / (n - 1)) / (loo_s1 / (n - 1)) ** 2)
    if not np.all(np.isfinite(loo)):
        raise ZeroHitError("a leave-one-out sample has zero mean count")
    stderr = math.sqrt((n - 1) / n * float(((loo - loo.mean()) ** 2).sum()))
    return float(full), stderr


def integrated_autocorr_time(x: np.ndarray, window: float = 5.0) -> float:
    """
    Integrated autocorrelation time with Sokal's self-consistent window.

    Args:
        x: Scalar trace
        window: Window constant c; the sum stops at the first M >= c * tau(M)

    Returns:
        tau_int >= 1 (1 for an uncorrelated or constant trace)
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return 1.0
    x = x - x.mean()
    var = float(np.dot(x, x))
    if var == 0.0:
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(x, size)
    acf = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / var
    taus = 2.0 * np.cumsum(acf) - 1.0
    lags = np.arange(n)
    stop = np.nonzero(lags >= window * taus)[0]
    m = int(stop[0]) if stop.size else n - 1
    return max(1.0, float(taus[m]))


def z_score(a: McEstimate, b: McEstimate) -> float:
    """Difference of two independent estimates in units of the combined stderr"""
    combined = math.hypot(a.stderr, b.stderr)
    diff = a.mean - b.mean
    if combined == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / combined
