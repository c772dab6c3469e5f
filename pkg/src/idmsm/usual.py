"""Marginal structural illness-death model without frailty.

The model is fit as three weighted Cox regressions (transitions out of the
healthy state share calendar time from zero; the ill-to-dead transition is
left truncated at the illness time).  Marginal cumulative incidence under
each treatment arm is computed by a discrete plug-in that uses the
product-limit form of overall survival, so the three quantities
F1 + F2 + S partition probability exactly at every grid point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cox import CoxFit, fit_transitions, sandwich_variance
from .data import Cohort, StepFunction
from .errors import GridBeforeT1

KINDS = ("f1", "f2", "f12")


@dataclass
class UsualMarkovFit:
    """Three transition fits plus their joint robust covariance."""

    fits: tuple[CoxFit, CoxFit, CoxFit]
    covariance: np.ndarray
    weights_provenance: dict = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return np.array([f.beta for f in self.fits])

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def baselines(self) -> tuple[StepFunction, StepFunction, StepFunction]:
        return tuple(f.baseline for f in self.fits)

    def to_dict(self):
        return {
            "model": "usual",
            "transitions": [f.to_dict() for f in self.fits],
            "covariance": self.covariance.tolist(),
            "weights_provenance": self.weights_provenance,
        }


@dataclass
class RiskCurve:
    """Cumulative incidence on a time grid under both treatment arms."""

    kind: str
    grid: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    t1: Optional[float] = None


@dataclass
class ContrastSeries:
    """Risk curves plus their difference and ratio, with optional bounds."""

    kind: str
    grid: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    rd: np.ndarray
    rr: np.ndarray
    t1: Optional[float] = None
    rd_lo: Optional[np.ndarray] = None
    rd_hi: Optional[np.ndarray] = None
    rr_lo: Optional[np.ndarray] = None
    rr_hi: Optional[np.ndarray] = None


def fit_usual_markov(cohort: Cohort, weights=None, weights_provenance=None) -> UsualMarkovFit:
    """Fit the three weighted transition models and their joint covariance.

    ``weights`` (e.g. IP weights) multiply the cohort's own prior weights.
    """
    work = cohort
    if weights is not None:
        work = cohort.with_weights(cohort.weight * np.asarray(weights, dtype=float))
    fits = fit_transitions(work)
    cov = sandwich_variance(fits, work)
    return UsualMarkovFit(fits=fits, covariance=cov,
                          weights_provenance=weights_provenance or {"source": "supplied"})


def _plugin_curves(base1: StepFunction, base2: StepFunction, rate1: float, rate2: float):
    """F1, F2 and S at the merged jump times (discrete product-limit form).

    S jumps by S(t-) * (rate1 dL1 + rate2 dL2) at each event time and the
    incidence sums absorb exactly those jumps, so F1 + F2 + S = 1 holds
    identically at every time.
    """
    times = np.union1d(base1.times, base2.times)
    d1 = np.diff(base1.evaluate(times), prepend=0.0)
    d2 = np.diff(base2.evaluate(times), prepend=0.0)
    factors = 1.0 - rate1 * d1 - rate2 * d2
    surv = np.cumprod(factors)
    surv_before = np.concatenate([[1.0], surv[:-1]])
    f1 = np.cumsum(surv_before * rate1 * d1)
    f2 = np.cumsum(surv_before * rate2 * d2)
    return times, f1, f2, surv


def _eval_step(times, values, grid, start):
    idx = np.searchsorted(times, grid, side="right")
    padded = np.concatenate([[start], values])
    return padded[idx]


def cif(fit, kind: str, a: int, grid, t1: Optional[float] = None,
        frailty: float = 0.0) -> np.ndarray:
    """Cumulative incidence curve for one treatment arm on a time grid.

    ``kind`` is one of ``f1`` (illness), ``f2`` (death without illness) or
    ``f12`` (death following illness by ``t1``, requiring ``grid >= t1``).
    ``frailty`` shifts every linear predictor and is zero for the marginal
    model.
    """
    grid = np.asarray(grid, dtype=float)
    beta = fit.beta
    base = fit.baselines
    if kind in ("f1", "f2"):
        rate1 = float(np.exp(beta[0] * a + frailty))
        rate2 = float(np.exp(beta[1] * a + frailty))
        times, f1, f2, _ = _plugin_curves(base[0], base[1], rate1, rate2)
        values = f1 if kind == "f1" else f2
        return _eval_step(times, values, grid, 0.0)
    if kind == "f12":
        if t1 is None:
            raise ValueError("kind 'f12' requires t1")
        if grid.size and grid.min() < t1:
            raise GridBeforeT1("grid must start at or after t1")
        rate3 = np.exp(beta[2] * a + frailty)
        gap = base[2].evaluate(grid) - base[2].evaluate(t1)
        return 1.0 - np.exp(-rate3 * gap)
    raise ValueError(f"unknown curve kind {kind!r}")


def survival(fit, a: int, grid, frailty: float = 0.0) -> np.ndarray:
    """Probability of remaining in the healthy state, same plug-in form."""
    grid = np.asarray(grid, dtype=float)
    beta = fit.beta
    base = fit.baselines
    rate1 = float(np.exp(beta[0] * a + frailty))
    rate2 = float(np.exp(beta[1] * a + frailty))
    times, _, _, surv = _plugin_curves(base[0], base[1], rate1, rate2)
    return _eval_step(times, surv, grid, 1.0)


def risk_curve(fit, kind: str, grid, t1: Optional[float] = None,
               frailty: float = 0.0) -> RiskCurve:
    """Risk curve under both arms (see :func:`cif`)."""
    grid = np.asarray(grid, dtype=float)
    return RiskCurve(
        kind=kind,
        grid=grid,
        a0=cif(fit, kind, 0, grid, t1, frailty),
        a1=cif(fit, kind, 1, grid, t1, frailty),
        t1=t1,
    )


def risk_contrast(fit, kind: str, grid, t1: Optional[float] = None,
                  frailty: float = 0.0) -> ContrastSeries:
    """Risk difference and ratio between the two arms on the grid.

    The ratio is NaN wherever the reference-arm risk is zero.
    """
    curve = risk_curve(fit, kind, grid, t1, frailty)
    rd = curve.a1 - curve.a0
    with np.errstate(divide="ignore", invalid="ignore"):
        rr = np.where(curve.a0 > 0, curve.a1 / np.where(curve.a0 > 0, curve.a0, 1.0), np.nan)
    return ContrastSeries(kind=kind, grid=curve.grid, a0=curve.a0, a1=curve.a1,
                          rd=rd, rr=rr, t1=t1)


def default_grid(cohort: Cohort) -> np.ndarray:
    """All observed event times up to the 95th percentile of x2."""
    events = np.concatenate([
        cohort.x1[cohort.delta1 == 1],
        cohort.x2[cohort.delta2 == 1],
    ])
    cutoff = np.quantile(cohort.x2, 0.95)
    grid = np.unique(events[events <= cutoff])
    return grid


def default_t1(cohort: Cohort) -> float:
    """Median illness time among subjects observed to become ill."""
    ill = cohort.x1[cohort.delta1 == 1]
    if ill.size == 0:
        raise ValueError("no illness events observed")
    return float(np.median(ill))
