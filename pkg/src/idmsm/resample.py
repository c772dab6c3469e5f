"""Bootstrap inference: standard resampling and the Bayesian bootstrap.

Replicate r draws its own RNG stream from (seed, r), so results are
bit-identical for a fixed plan regardless of worker count or completion
order.  Failed replicates (estimation errors on degenerate resamples) are
excluded and counted; more than 10% failures aborts the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Cohort
from .errors import BootstrapFailure, IdmsmError

Z_95 = 1.96


@dataclass
class BootstrapPlan:
    replicates: int
    seed: int
    mode: str = "standard"  # "standard" | "bayesian"
    refit_propensity: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.mode not in ("standard", "bayesian"):
            raise ValueError(f"unknown bootstrap mode {self.mode!r}")


@dataclass
class BootstrapResult:
    point: np.ndarray
    estimates: np.ndarray       # (replicates_ok, k)
    se: np.ndarray
    normal_lo: np.ndarray
    normal_hi: np.ndarray
    percentile_lo: np.ndarray
    percentile_hi: np.ndarray
    n_failed: int


def _replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _collect(results, n_requested):
    ok = [r for r in results if r is not None]
    n_failed = n_requested - len(ok)
    if n_failed > 0.10 * n_requested:
        raise BootstrapFailure(
            f"{n_failed}/{n_requested} bootstrap replicates failed to fit"
        )
    return np.vstack([np.atleast_1d(np.asarray(r, dtype=float)) for r in ok]), n_failed


def _summarize(point, estimates, n_failed):
    point = np.atleast_1d(np.asarray(point, dtype=float))
    se = estimates.std(axis=0, ddof=1) if estimates.shape[0] > 1 else np.zeros(point.shape)
    return BootstrapResult(
        point=point,
        estimates=estimates,
        se=se,
        normal_lo=point - Z_95 * se,
        normal_hi=point + Z_95 * se,
        percentile_lo=np.percentile(estimates, 2.5, axis=0),
        percentile_hi=np.percentile(estimates, 97.5, axis=0),
        n_failed=n_failed,
    )


def _run_replicates(tasks, threads):
    if threads > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=threads)(delayed(t)() for t in tasks)
    return [t() for t in tasks]


def bootstrap(cohort: Cohort, plan: BootstrapPlan,
              estimator: Callable[[Cohort, np.ndarray], np.ndarray],
              weight_fn: Optional[Callable[[Cohort], np.ndarray]] = None,
              base_weights=None, threads: int = 1) -> BootstrapResult:
    """Resample subjects with replacement and refit.

    ``estimator(cohort, weights)`` extracts the statistic of interest from a
    weighted cohort.  When the plan refits the propensity model,
    ``weight_fn`` is re-applied inside every replicate; otherwise each
    resampled subject carries its original ``base_weights`` entry.
    """
    n = cohort.n
    if base_weights is None:
        base_weights = np.ones(n)
    base_weights = np.asarray(base_weights, dtype=float)
    point_weights = weight_fn(cohort) if (plan.refit_propensity and weight_fn) else base_weights
    point = estimator(cohort, point_weights)

    def make_task(r):
        def task():
            rng = _replicate_rng(plan.seed, r)
            idx = rng.integers(0, n, size=n)
            sub = cohort.take(idx)
            try:
                if plan.refit_propensity and weight_fn is not None:
                    w = weight_fn(sub)
                else:
                    w = base_weights[idx]
                return estimator(sub, w)
            except IdmsmError:
                return None
        return task

    results = _run_replicates([make_task(r) for r in range(plan.replicates)], threads)
    estimates, n_failed = _collect(results, plan.replicates)
    return _summarize(point, estimates, n_failed)


@dataclass
class BayesianBootstrapResult:
    point: np.ndarray           # (n, k) per-subject statistics at the point fit
    se: np.ndarray
    lo: np.ndarray              # point - 1.96 se
    hi: np.ndarray
    replicates: np.ndarray      # (replicates_ok, n, k)
    n_failed: int


def bayesian_bootstrap(cohort: Cohort, plan: BootstrapPlan,
                       fit_and_contrast: Callable[[Cohort, np.ndarray], np.ndarray],
                       weight_fn: Optional[Callable[[Cohort], np.ndarray]] = None,
                       threads: int = 1) -> BayesianBootstrapResult:
    """Prediction intervals for per-subject statistics.

    Each replicate draws unit-mean exponential weights (every subject stays
    in the sample), re-estimates the treatment model on the reweighted data,
    and refits; ``fit_and_contrast(cohort, weights)`` must return one row per
    subject.  95% intervals use the normal approximation with the bootstrap
    standard error around the point fit.
    """
    n = cohort.n
    point_weights = weight_fn(cohort) if weight_fn else np.ones(n)
    point = np.asarray(fit_and_contrast(cohort, point_weights), dtype=float)

    def make_task(r):
        def task():
            rng = _replicate_rng(plan.seed, r)
            u = rng.standard_exponential(n)
            w_boot = u / u.mean()
            sub = cohort.with_weights(cohort.weight * w_boot)
            try:
                w = weight_fn(sub) if weight_fn else np.ones(n)
                return np.asarray(fit_and_contrast(sub, w), dtype=float)
            except IdmsmError:
                return None
        return task

    results = _run_replicates([make_task(r) for r in range(plan.replicates)], threads)
    ok = [r for r in results if r is not None]
    n_failed = plan.replicates - len(ok)
    if n_failed > 0.10 * plan.replicates:
        raise BootstrapFailure(
            f"{n_failed}/{plan.replicates} Bayesian bootstrap replicates failed"
        )
    reps = np.stack(ok, axis=0)
    se = reps.std(axis=0, ddof=1) if reps.shape[0] > 1 else np.zeros_like(point)
    return BayesianBootstrapResult(
        point=point,
        se=se,
        lo=point - Z_95 * se,
        hi=point + Z_95 * se,
        replicates=reps,
        n_failed=n_failed,
    )
