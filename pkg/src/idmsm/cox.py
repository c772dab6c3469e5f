"""Weighted Cox engine for a single binary covariate with offsets.

Supports delayed entry (a record is at risk at time t iff entry < t <= exit),
per-record weights and known offsets in the linear predictor.  Ties are
handled with the Breslow convention: tied events share one risk set and the
baseline jump at a tied time pools their weights.

The robust (sandwich) machinery follows the score-residual construction for
weighted partial likelihoods: each record contributes an event part and a
risk-set part, and the per-transition variance is info^-1 (sum U_i^2) info^-1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Cohort, StepFunction, TransitionRecord, build_transition_data
from .errors import (
    EmptyRiskSet,
    MonotoneLikelihood,
    NoEvents,
    NotConverged,
    NoVariation,
    SingularInformation,
)

MAX_ABS_BETA = 30.0
MAX_ITER = 50
SCORE_TOL = 1e-8
STEP_TOL = 1e-10


class PreparedTransition:
    """Index structures for repeated fits on a fixed set of records.

    Sorting and searchsorted positions depend only on the times, so they are
    computed once; each fit then only re-evaluates exponentials and suffix
    sums.  Used directly by the EM loop, which refits the same transitions
    with fresh offsets every iteration.
    """

    def __init__(self, records: Sequence[TransitionRecord]):
        self.m = len(records)
        self.entry = np.array([r.entry for r in records], dtype=float)
        self.exit = np.array([r.exit for r in records], dtype=float)
        self.event = np.array([r.event for r in records], dtype=bool)
        self.a = np.array([r.a for r in records], dtype=float)
        self.w = np.array([r.weight for r in records], dtype=float)
        self.offset = np.array([r.offset for r in records], dtype=float)
        self.subject_index = np.array([r.index for r in records], dtype=int)

        ev_times = self.exit[self.event]
        ev_w = self.w[self.event]
        ev_wa = ev_w * self.a[self.event]
        self.times, inv = np.unique(ev_times, return_inverse=True)
        self.n_times = self.times.size
        self.dw = np.bincount(inv, weights=ev_w, minlength=self.n_times)
        self.dwa = np.bincount(inv, weights=ev_wa, minlength=self.n_times)
        self.event_time_pos = inv  # position of each event's time in `times`

        # At-risk bookkeeping: S(t) = sum_{exit >= t} r - sum_{entry >= t} r.
        self.exit_order = np.argsort(self.exit, kind="stable")
        self.entry_order = np.argsort(self.entry, kind="stable")
        self.pos_exit = np.searchsorted(self.exit[self.exit_order], self.times, side="left")
        self.pos_entry = np.searchsorted(self.entry[self.entry_order], self.times, side="left")
        # Record-level positions for cumulative event-time sums (risk-set part
        # of the score residuals): event times in (entry, exit].
        self.rec_hi = np.searchsorted(self.times, self.exit, side="right")
        self.rec_lo = np.searchsorted(self.times, self.entry, side="right")

    def _risk_sums(self, beta, offset):
        """S0 and S1 at every event time for the given linear predictor."""
        with np.errstate(over="ignore"):
            r = self.w * np.exp(beta * self.a + offset)
        ra = r * self.a
        s0 = _suffix_at(r, self.exit_order, self.pos_exit) - _suffix_at(
            r, self.entry_order, self.pos_entry
        )
        s1 = _suffix_at(ra, self.exit_order, self.pos_exit) - _suffix_at(
            ra, self.entry_order, self.pos_entry
        )
        return s0, s1

    def loglik(self, beta, offset=None):
        """Weighted partial log-likelihood (Breslow ties)."""
        offset = self.offset if offset is None else offset
        s0, _ = self._risk_sums(beta, offset)
        if np.any(s0 <= 0):
            raise EmptyRiskSet("empty risk set at an event time")
        lin = beta * self.a + offset
        return float(np.sum(self.w[self.event] * lin[self.event]) - np.sum(self.dw * np.log(s0)))


def _suffix_at(values, order, pos):
    """Suffix sums of values[order] evaluated at searchsorted positions.

    Accumulates in extended precision: the score convergence tolerance is
    absolute, so plain float64 cumsum rounding over a few thousand records
    would dominate it.
    """
    sorted_vals = values[order].astype(np.longdouble)
    suffix = np.concatenate([np.cumsum(sorted_vals[::-1])[::-1], [0.0]])
    return suffix[pos].astype(float)


@dataclass
class CoxFit:
    """A converged weighted Cox fit for one transition."""

    beta: float
    baseline: StepFunction
    loglik: float
    model_se: float
    score_contributions: np.ndarray
    at_risk_sums: dict
    information: float
    n_events: int
    iterations: int
    subject_index: np.ndarray
    weight_sum: float

    def to_dict(self):
        return {
            "beta": self.beta,
            "se_model": self.model_se,
            "baseline": self.baseline.to_dict(),
            "loglik": self.loglik,
            "iterations": self.iterations,
        }


def fit_weighted_cox(records: Sequence[TransitionRecord], offsets=None) -> CoxFit:
    """Maximize the weighted partial likelihood by Newton-Raphson.

    Parameters
    ----------
    records : sequence of TransitionRecord
        Risk-set records for one transition.
    offsets : array, optional
        Per-record offsets overriding the ones stored in the records.

    Raises ``NoEvents``, ``NoVariation`` (covariate constant within risk
    sets), ``MonotoneLikelihood`` (estimate diverging beyond |beta| = 30) or
    ``NotConverged``.
    """
    prep = PreparedTransition(records)
    return fit_prepared(prep, offsets)


def fit_prepared(prep: PreparedTransition, offsets=None, beta_start=0.0) -> CoxFit:
    """Fit on a prepared transition; see :func:`fit_weighted_cox`.

    ``beta_start`` warm-starts the Newton iteration (the partial likelihood
    is strictly concave here, so the maximizer does not depend on it).
    """
    offset = prep.offset if offsets is None else np.asarray(offsets, dtype=float)
    if not prep.event.any():
        raise NoEvents("no events in this transition")

    beta = float(beta_start)
    ll = _score_pieces(prep, beta, offset)
    if ll.info <= 1e-12 * max(1.0, prep.dw.sum()):
        raise NoVariation("treatment constant within every event-time risk set")
    it = 0
    for it in range(1, MAX_ITER + 1):
        step = ll.score / ll.info
        new_beta = beta + step
        # Step-halving: the partial likelihood is concave, so a decreasing
        # step means we overshot.
        for _ in range(30):
            new_ll = _score_pieces(prep, new_beta, offset)
            if new_ll.loglik >= ll.loglik - 1e-12:
                break
            step /= 2.0
            new_beta = beta + step
        if abs(new_beta) > MAX_ABS_BETA:
            raise MonotoneLikelihood("coefficient diverging; likelihood is monotone")
        delta = abs(new_beta - beta)
        beta, ll = new_beta, new_ll
        if abs(ll.score) <= SCORE_TOL and delta <= STEP_TOL:
            break
    else:
        raise NotConverged(f"Newton-Raphson did not converge in {MAX_ITER} iterations")

    increments = prep.dw / ll.s0
    baseline = StepFunction(prep.times, increments)
    resid = _score_residuals(prep, beta, offset, ll)
    if ll.info <= 0:
        raise SingularInformation("zero information at the optimum")
    robust_var = float(np.sum(resid**2) / ll.info**2)
    return CoxFit(
        beta=float(beta),
        baseline=baseline,
        loglik=float(ll.loglik),
        model_se=float(np.sqrt(robust_var)),
        score_contributions=resid,
        at_risk_sums={"times": prep.times, "s0": ll.s0, "s1": ll.s1},
        information=float(ll.info),
        n_events=int(prep.event.sum()),
        iterations=it,
        subject_index=prep.subject_index,
        weight_sum=float(prep.w.sum()),
    )


class _Pieces:
    __slots__ = ("loglik", "score", "info", "s0", "s1")


def _score_pieces(prep, beta, offset):
    s0, s1 = prep._risk_sums(beta, offset)
    if np.any(s0 <= 0):
        raise EmptyRiskSet("empty risk set at an event time")
    p = s1 / s0
    out = _Pieces()
    lin = beta * prep.a + offset
    out.loglik = float(
        np.sum(prep.w[prep.event] * lin[prep.event]) - np.sum(prep.dw * np.log(s0))
    )
    out.score = float(np.sum(prep.dwa) - np.sum(prep.dw * p))
    # Binary covariate: S2 = S1, so the information term is dw * p * (1 - p).
    out.info = float(np.sum(prep.dw * p * (1.0 - p)))
    out.s0, out.s1 = s0, s1
    return out


def _score_residuals(prep, beta, offset, pieces):
    """Per-record score residuals U^(i): event part minus risk-set part."""
    p = pieces.s1 / pieces.s0
    dLambda = prep.dw / pieces.s0
    cumG = np.concatenate([[0.0], np.cumsum(dLambda)])
    cumH = np.concatenate([[0.0], np.cumsum(dLambda * p)])
    part1 = np.zeros(prep.m)
    ev = prep.event
    part1[ev] = prep.w[ev] * (prep.a[ev] - p[prep.event_time_pos])
    rel_risk = np.exp(beta * prep.a + offset)
    g = cumG[prep.rec_hi] - cumG[prep.rec_lo]
    h = cumH[prep.rec_hi] - cumH[prep.rec_lo]
    part2 = prep.w * rel_risk * (prep.a * g - h)
    return part1 - part2


def breslow_baseline(records: Sequence[TransitionRecord], beta: float) -> StepFunction:
    """Breslow cumulative baseline hazard at a given coefficient.

    Jump at event time t is (total event weight at t) / S0(beta; t).  With no
    events the zero function is returned.
    """
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    prep = PreparedTransition(records)
    if not prep.event.any():
        return StepFunction.zero()
    s0, _ = prep._risk_sums(beta, prep.offset)
    if np.any(s0 <= 0):
        raise EmptyRiskSet("empty risk set at an event time")
    return StepFunction(prep.times, prep.dw / s0)


def sandwich_variance(fits, cohort: Cohort) -> np.ndarray:
    """Joint robust covariance of the three transition coefficients.

    Per-subject score residuals from each transition are assembled into a
    3 x n matrix (zero where a subject never enters a transition's risk set);
    with B the diagonal of scaled informations and M the scaled outer-product
    sum, the estimate is B^-1 M B^-1 / (total weight).  Diagonal entries
    reproduce each transition's own robust variance.
    """
    n = cohort.n
    wsum = float(cohort.weight.sum())
    U = np.zeros((3, n))
    infos = np.empty(3)
    for j, fit in enumerate(fits):
        np.add.at(U[j], fit.subject_index, fit.score_contributions)
        infos[j] = fit.information
    if np.any(infos <= 0):
        raise SingularInformation("a transition has zero information")
    B = np.diag(infos / wsum)
    M = (U @ U.T) / wsum
    Binv = np.diag(wsum / infos)
    return Binv @ M @ Binv / wsum


def fit_transitions(cohort: Cohort, weights=None, offsets=None):
    """Fit all three transition models on one cohort.

    ``weights`` multiply the cohort's own prior weights; ``offsets`` is an
    optional per-subject array applied to every transition the subject
    enters.  Returns a tuple of three CoxFits.
    """
    work = cohort if weights is None else cohort.with_weights(cohort.weight * np.asarray(weights, dtype=float))
    fits = []
    for j in (1, 2, 3):
        records = build_transition_data(work, j)
        prep = PreparedTransition(records)
        off = None if offsets is None else np.asarray(offsets, dtype=float)[prep.subject_index]
        fits.append(fit_prepared(prep, off))
    return tuple(fits)
