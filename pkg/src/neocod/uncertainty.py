"""Uncertainty machinery: stratified bootstrap and count-based intervals.

The bootstrap resamples observations with replacement inside each stratum
(model family), reruns an arbitrary statistic, and reports 2.5th/97.5th
percentile bounds around the full-data point estimate. Replicate r draws its
random state from ``SeedSequence(seed, spawn_key=(r,))``, so results do not
depend on how replicates are distributed over worker processes.

Vital-registration fractions get normal-approximation Poisson intervals on
the death count; zero counts fall back to the exact one-sided bound.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

DEFAULT_REPLICATES = 1000
PERCENTILES = (2.5, 97.5)

#: flag the run when more than this share of replicates fails
MAX_FAILURE_FRACTION = 0.10

#: below this many replicates the tail percentiles are meaningless
MIN_REPLICATES_FOR_TAILS = 40

Z_95 = 1.96

#: -ln(0.025): exact upper bound on a Poisson mean given an observed zero
ZERO_COUNT_BOUND = 3.6888794541139363


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    method: str = "bootstrap"        # "bootstrap" or "poisson"
    zero_count: bool = False
    replicates_used: int | None = None

    def __post_init__(self) -> None:
        if self.method not in ("bootstrap", "poisson"):
            raise ValidationError(f"unknown interval method: {self.method!r}")
        if self.lo > self.hi:
            raise ValidationError(f"interval lo {self.lo} exceeds hi {self.hi}")


def percentile_interval(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """2.5th and 97.5th percentiles with linear interpolation."""
    lo, hi = np.percentile(samples, PERCENTILES, axis=axis)
    return lo, hi


def resample_indices(rng: np.random.Generator, strata: list[np.ndarray]) -> np.ndarray:
    """Draw a with-replacement resample separately within each stratum."""
    parts = [rng.choice(s, size=s.size, replace=True) for s in strata if s.size]
    if not parts:
        raise ValidationError("no observations to resample")
    return np.concatenate(parts)


def _replicate(args):
    statistic, seed, r, strata = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
    idx = resample_indices(rng, strata)
    try:
        return r, np.asarray(statistic(idx), dtype=float), None
    except (NumericalError, np.linalg.LinAlgError) as exc:
        return r, None, f"{type(exc).__name__}: {exc}"


@dataclass
class BootstrapResult:
    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    samples: np.ndarray          # (n_success, k) replicate statistics
    n_replicates: int
    n_failures: int
    unstable: bool
    failure_messages: list[str] = field(default_factory=list)


def bootstrap(
    statistic,
    n_obs: int,
    strata_labels=None,
    n_replicates: int = DEFAULT_REPLICATES,
    seed: int = 0,
    jobs: int = 1,
) -> BootstrapResult:
    """Stratified nonparametric bootstrap of ``statistic``.

    ``statistic`` maps an index array (a resample of ``range(n_obs)``) to a
    float vector; it is first evaluated on the identity indexing to give the
    point estimate. Replicates that raise :class:`NumericalError` are
    dropped; the result is flagged unstable when more than 10% fail. With
    ``jobs > 1`` the statistic must be picklable.
    """
    if n_obs <= 0:
        raise ValidationError("need at least one observation")
    if n_replicates <= 0:
        raise ValidationError("need a positive replicate count")
    if n_replicates < MIN_REPLICATES_FOR_TAILS:
        warnings.warn(
            f"{n_replicates} replicates is too few for stable 95% bounds",
            RuntimeWarning,
            stacklevel=2,
        )
    if strata_labels is None:
        strata = [np.arange(n_obs)]
    else:
        strata_labels = np.asarray(strata_labels)
        if strata_labels.shape != (n_obs,):
            raise ValidationError("strata labels must have one entry per observation")
        # keep first-appearance order so resamples are reproducible
        _, first = np.unique(strata_labels, return_index=True)
        order = strata_labels[np.sort(first)]
        strata = [np.flatnonzero(strata_labels == s) for s in order]

    point = np.asarray(statistic(np.arange(n_obs)), dtype=float)

    tasks = [(statistic, seed, r, strata) for r in range(n_replicates)]
    results: list[tuple[int, np.ndarray | None, str | None]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=8))
    else:
        results = [_replicate(t) for t in tasks]
    results.sort(key=lambda t: t[0])

    samples = [val for _, val, _ in results if val is not None]
    messages = [msg for _, _, msg in results if msg is not None]
    n_failures = len(messages)
    if not samples:
        raise NumericalError("every bootstrap replicate failed")
    sample_arr = np.vstack(samples)
    lo, hi = percentile_interval(sample_arr)
    return BootstrapResult(
        point=point,
        lo=lo,
        hi=hi,
        samples=sample_arr,
        n_replicates=n_replicates,
        n_failures=n_failures,
        unstable=n_failures > MAX_FAILURE_FRACTION * n_replicates,
        failure_messages=messages[:20],
    )


def poisson_vr_interval(cause_deaths: float, total_deaths: float) -> IntervalEstimate:
    """Interval for one vital-registration cause fraction.

    The cause count is treated as Poisson: SE = sqrt(count) and the normal
    bounds (count +/- 1.96 SE) / total are clamped to [0, 1]. A zero count
    instead gets the exact upper bound -ln(0.025) / total and is flagged.
    """
    if total_deaths <= 0:
        raise ValidationError("total deaths must be positive")
    if cause_deaths < 0 or cause_deaths > total_deaths:
        raise ValidationError(
            f"cause deaths {cause_deaths} outside [0, {total_deaths}]"
        )
    point = cause_deaths / total_deaths
    if cause_deaths == 0:
        return IntervalEstimate(0.0, 0.0, min(1.0, ZERO_COUNT_BOUND / total_deaths),
                                method="poisson", zero_count=True)
    se = np.sqrt(cause_deaths)
    lo = max(0.0, (cause_deaths - Z_95 * se) / total_deaths)
    hi = min(1.0, (cause_deaths + Z_95 * se) / total_deaths)
    return IntervalEstimate(point, lo, hi, method="poisson")
