"""General Markov illness-death structural model with log-normal frailty.

The shared frailty b ~ N(0, sigma2) multiplies all three transition
intensities through e^b.  Estimation alternates:

* E-step: posterior moments E[e^b], E[b], E[b^2] per subject under the
  current parameters, by mode-centered adaptive Gauss-Hermite quadrature
  (the posterior kernel is exp{d*b - g*e^b - b^2/(2 sigma2)} with d the
  subject's event count and g its accumulated intensity exposure);
* M-step: three weighted Cox fits with known offsets log E[e^b], plus the
  closed-form variance update sigma2 = sum(w E[b^2]) / sum(w).

The weighted observed-data log-likelihood never decreases along the
iteration, which the fit records as a per-iteration trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import pandas as pd

from .cox import PreparedTransition, fit_prepared
from .data import Cohort, StepFunction, SubjectRecord, build_transition_data
from .errors import QuadratureFailure
from .usual import cif as _cif_kernel

SIGMA2_FLOOR = 1e-10


@dataclass
class EMControls:
    max_iter: int = 500
    tol_loglik: float = 1e-5
    tol_beta: float = 1e-3
    tol_sigma2: float = 1e-3
    quad_nodes: int = 20
    fallback_nodes: int = 50
    sigma2_init: float = 1.0


@dataclass
class ModelParams:
    """Parameter state of the general Markov model."""

    beta: np.ndarray
    baselines: tuple[StepFunction, StepFunction, StepFunction]
    sigma2: float


@dataclass
class PosteriorMoments:
    """Per-subject posterior summaries of the frailty."""

    exp_b: np.ndarray   # E[e^b | O]
    b: np.ndarray       # E[b | O]
    b2: np.ndarray      # E[b^2 | O]


@dataclass
class GeneralMarkovFit:
    beta: np.ndarray
    baselines: tuple[StepFunction, StepFunction, StepFunction]
    sigma2: float
    posterior_moments: PosteriorMoments
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    weights_provenance: dict = field(default_factory=dict)

    @property
    def beta1(self):
        return float(self.beta[0])

    @property
    def beta2(self):
        return float(self.beta[1])

    @property
    def beta3(self):
        return float(self.beta[2])

    def to_dict(self):
        return {
            "model": "general",
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2,
            "baselines": [b.to_dict() for b in self.baselines],
            "loglik_trace": self.loglik_trace.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "weights_provenance": self.weights_provenance,
        }


@lru_cache(maxsize=8)
def _hermgauss(n):
    x, v = np.polynomial.hermite.hermgauss(n)
    return x, np.log(v)


class _FrailtyData:
    """Cohort-level caches shared across EM iterations.

    All searchsorted positions depend only on the observed times, never on
    the parameters, so the per-iteration work reduces to gathers and
    elementwise arithmetic.
    """

    def __init__(self, cohort: Cohort, weights=None):
        work = cohort
        if weights is not None:
            work = cohort.with_weights(cohort.weight * np.asarray(weights, dtype=float))
        self.cohort = work
        self.n = work.n
        self.w = work.weight
        self.a = work.a.astype(float)
        self.d1 = work.delta1.astype(float)
        self.d2 = work.delta2.astype(float)
        self.d_total = self.d1 + self.d2
        self.preps = tuple(
            PreparedTransition(build_transition_data(work, j)) for j in (1, 2, 3)
        )
        self.x1, self.x2 = work.x1, work.x2
        self.ev1 = work.delta1 == 1
        self.ev2 = (work.delta2 == 1) & (work.delta1 == 0)
        self.ev3 = (work.delta1 == 1) & (work.delta2 == 1)

    def exposures(self, params: ModelParams) -> np.ndarray:
        """g_i: total intensity multiplier on e^b for each subject."""
        base1, base2, base3 = params.baselines
        lam1 = base1.evaluate(self.x1)
        lam2 = base2.evaluate(self.x1)
        lam3 = base3.evaluate(self.x2) - base3.evaluate(self.x1)
        b1, b2, b3 = params.beta
        return (
            lam1 * np.exp(b1 * self.a)
            + lam2 * np.exp(b2 * self.a)
            + lam3 * np.exp(b3 * self.a)
        )

    def event_terms(self, params: ModelParams) -> np.ndarray:
        """c_i: b-free part of each subject's conditional log-likelihood."""
        b1, b2, b3 = params.beta
        base1, base2, base3 = params.baselines
        out = np.zeros(self.n)
        with np.errstate(divide="ignore"):
            jump1 = np.log(base1.evaluate(self.x1) - base1.evaluate_before(self.x1))
            jump2 = np.log(base2.evaluate(self.x2) - base2.evaluate_before(self.x2))
            jump3 = np.log(base3.evaluate(self.x2) - base3.evaluate_before(self.x2))
        out[self.ev1] += b1 * self.a[self.ev1] + jump1[self.ev1]
        out[self.ev2] += b2 * self.a[self.ev2] + jump2[self.ev2]
        out[self.ev3] += b3 * self.a[self.ev3] + jump3[self.ev3]
        return out


def _posterior_modes(d, g, sigma2, start=None):
    """Maximize d*b - g*e^b - b^2/(2 sigma2) per subject (strictly concave)."""
    m = np.zeros_like(d) if start is None else start.copy()
    inv_s2 = 1.0 / sigma2
    ok = np.zeros(m.shape, dtype=bool)
    for _ in range(200):
        eb = np.exp(m)
        grad = d - g * eb - m * inv_s2
        ok = np.abs(grad) <= 1e-10 * (1.0 + np.abs(d) + np.abs(m) * inv_s2)
        if ok.all():
            break
        step = grad / (g * eb + inv_s2)
        np.clip(step, -2.0, 2.0, out=step)
        m = np.clip(m + step, -60.0, 60.0)
    return m, ok


def _quad_moments(d, g, sigma2, nodes, fallback_nodes, mode_start=None):
    """Posterior moments and log-evidence by adaptive Gauss-Hermite.

    Returns (E[e^b], E[b], E[b^2], log integral of the joint kernel times
    the normal prior density, posterior modes).
    """
    mode, ok = _posterior_modes(d, g, sigma2, mode_start)
    if not ok.all():
        mode = np.where(ok, mode, 0.0)
    scale = 1.0 / np.sqrt(g * np.exp(mode) + 1.0 / sigma2)
    if not ok.all():
        # Non-adaptive fallback: prior-centered, wider rule.
        scale = np.where(ok, scale, np.sqrt(sigma2))
        x, logv = _hermgauss(fallback_nodes)
    else:
        x, logv = _hermgauss(nodes)

    b = mode[:, None] + np.sqrt(2.0) * scale[:, None] * x[None, :]
    log_kernel = (
        d[:, None] * b - g[:, None] * np.exp(b) - b**2 / (2.0 * sigma2)
    )
    log_terms = log_kernel + (x**2 + logv)[None, :]
    peak = log_terms.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(peak)):
        raise QuadratureFailure("posterior integral degenerate for some subject")
    terms = np.exp(log_terms - peak)
    norm = terms.sum(axis=1)
    e_b = (terms * b).sum(axis=1) / norm
    e_b2 = (terms * b**2).sum(axis=1) / norm
    e_exp_b = (terms * np.exp(b)).sum(axis=1) / norm
    log_evidence = (
        peak[:, 0] + np.log(norm) + 0.5 * np.log(2.0) + np.log(scale)
        - 0.5 * np.log(2.0 * np.pi * sigma2)
    )
    return e_exp_b, e_b, e_b2, log_evidence, mode


def _moments_and_evidence(data: _FrailtyData, params: ModelParams, controls: EMControls,
                          mode_start=None):
    if params.sigma2 <= SIGMA2_FLOOR:
        g = data.exposures(params)
        zero = np.zeros(data.n)
        return PosteriorMoments(np.ones(data.n), zero, zero.copy()), -g, None
    g = data.exposures(params)
    e_exp_b, e_b, e_b2, log_ev, mode = _quad_moments(
        data.d_total, g, params.sigma2, controls.quad_nodes, controls.fallback_nodes,
        mode_start,
    )
    return PosteriorMoments(e_exp_b, e_b, e_b2), log_ev, mode


def e_step(cohort: Cohort, params: ModelParams, controls: EMControls = None) -> PosteriorMoments:
    """Posterior frailty moments for every subject at the given parameters.

    sigma2 = 0 short-circuits to the degenerate point mass at zero.
    """
    controls = controls or EMControls()
    data = _FrailtyData(cohort)
    moments, _, _ = _moments_and_evidence(data, params, controls)
    return moments


def m_step(cohort: Cohort, moments: PosteriorMoments, weights=None) -> ModelParams:
    """One maximization step given posterior moments.

    The transition parameters come from offset Cox fits with offsets
    log E[e^b]; the frailty variance is the weighted mean of E[b^2].
    """
    data = _FrailtyData(cohort, weights)
    return _m_step_prepared(data, moments)


def _m_step_prepared(data: _FrailtyData, moments: PosteriorMoments,
                     beta_start=(0.0, 0.0, 0.0)) -> ModelParams:
    mu = np.log(moments.exp_b)
    fits = [
        fit_prepared(prep, mu[prep.subject_index], beta_start=b0)
        for prep, b0 in zip(data.preps, beta_start)
    ]
    sigma2 = float(np.sum(data.w * moments.b2) / np.sum(data.w))
    return ModelParams(
        beta=np.array([f.beta for f in fits]),
        baselines=tuple(f.baseline for f in fits),
        sigma2=max(sigma2, SIGMA2_FLOOR),
    )


def observed_loglik(cohort: Cohort, params: ModelParams, weights=None,
                    controls: EMControls = None) -> float:
    """Weighted observed-data log-likelihood (frailty integrated out)."""
    controls = controls or EMControls()
    data = _FrailtyData(cohort, weights)
    return _observed_prepared(data, params, controls)


def _observed_prepared(data: _FrailtyData, params: ModelParams, controls: EMControls,
                       mode_start=None) -> float:
    _, log_ev, _ = _moments_and_evidence(data, params, controls, mode_start)
    c = data.event_terms(params)
    return float(np.sum(data.w * (c + log_ev)))


def conditional_loglik(record: SubjectRecord, params: ModelParams, b: float) -> float:
    """Log conditional likelihood of one subject given its frailty.

    Baseline hazards are discrete: an event contributes the log jump of the
    corresponding cumulative baseline at the event time (-inf if that time
    carries no mass).
    """
    b1, b2, b3 = params.beta
    base1, base2, base3 = params.baselines
    out = -(
        base1.evaluate(record.x1) * np.exp(b1 * record.a + b)
        + base2.evaluate(record.x1) * np.exp(b2 * record.a + b)
        + (base3.evaluate(record.x2) - base3.evaluate(record.x1)) * np.exp(b3 * record.a + b)
    )
    with np.errstate(divide="ignore"):
        if record.delta1:
            jump = base1.evaluate(record.x1) - base1.evaluate_before(record.x1)
            out += b1 * record.a + b + np.log(jump)
        if record.delta2 and not record.delta1:
            jump = base2.evaluate(record.x2) - base2.evaluate_before(record.x2)
            out += b2 * record.a + b + np.log(jump)
        if record.delta1 and record.delta2:
            jump = base3.evaluate(record.x2) - base3.evaluate_before(record.x2)
            out += b3 * record.a + b + np.log(jump)
    return float(out)


def fit_general_markov(cohort: Cohort, weights=None,
                       controls: EMControls = None,
                       weights_provenance=None) -> GeneralMarkovFit:
    """Fit the frailty model by the weighted EM iteration.

    Starts from the no-offset (usual Markov) transition fits with
    sigma2 = 1, and stops when the log-likelihood and all parameters of
    interest move less than their tolerances in one iteration.  If the
    iteration cap is reached first the fit is returned with
    ``converged=False``.
    """
    controls = controls or EMControls()
    data = _FrailtyData(cohort, weights)
    init_fits = [fit_prepared(prep) for prep in data.preps]
    params = ModelParams(
        beta=np.array([f.beta for f in init_fits]),
        baselines=tuple(f.baseline for f in init_fits),
        sigma2=controls.sigma2_init,
    )
    ll = _observed_prepared(data, params, controls)
    trace = [ll]
    converged = False
    iterations = 0
    modes = None
    for iterations in range(1, controls.max_iter + 1):
        moments, _, modes = _moments_and_evidence(data, params, controls, modes)
        new_params = _m_step_prepared(data, moments, params.beta)
        new_ll = _observed_prepared(data, new_params, controls, modes)
        trace.append(new_ll)
        converged = (
            abs(new_ll - ll) <= controls.tol_loglik
            and np.max(np.abs(new_params.beta - params.beta)) <= controls.tol_beta
            and abs(new_params.sigma2 - params.sigma2) <= controls.tol_sigma2
        )
        params, ll = new_params, new_ll
        if converged:
            break
    final_moments, _, _ = _moments_and_evidence(data, params, controls, modes)
    return GeneralMarkovFit(
        beta=params.beta,
        baselines=params.baselines,
        sigma2=params.sigma2,
        posterior_moments=final_moments,
        loglik_trace=np.array(trace),
        iterations=iterations,
        converged=converged,
        weights_provenance=weights_provenance or {"source": "supplied"},
    )


def predict_b(fit: GeneralMarkovFit, cohort: Cohort, controls: EMControls = None) -> np.ndarray:
    """Predicted random effects: posterior means at the fitted parameters."""
    params = ModelParams(fit.beta, fit.baselines, fit.sigma2)
    return e_step(cohort, params, controls).b


def conditional_cif(fit: GeneralMarkovFit, kind: str, a: int, b: float, grid,
                    t1: Optional[float] = None) -> np.ndarray:
    """Conditional cumulative incidence at frailty value b (see usual.cif)."""
    return _cif_kernel(fit, kind, a, grid, t1, frailty=b)


def individual_contrasts(fit: GeneralMarkovFit, cohort: Cohort, t: float, kind: str,
                         t1: Optional[float] = None) -> pd.DataFrame:
    """Per-subject risk difference and ratio at the predicted frailty.

    The ratio is NaN where the reference-arm risk is zero.
    """
    b_hat = predict_b(fit, cohort)
    grid = np.array([t])
    ird = np.empty(cohort.n)
    irr = np.empty(cohort.n)
    for i, b in enumerate(b_hat):
        risk1 = conditional_cif(fit, kind, 1, b, grid, t1)[0]
        risk0 = conditional_cif(fit, kind, 0, b, grid, t1)[0]
        ird[i] = risk1 - risk0
        irr[i] = risk1 / risk0 if risk0 > 0 else np.nan
    return pd.DataFrame({"id": cohort.ids, "b_hat": b_hat, "ird": ird, "irr": irr})
