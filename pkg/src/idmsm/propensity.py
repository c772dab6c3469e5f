"""Treatment-model estimation and inverse-probability weighting.

The treatment probability P(A=1|Z) is fit by logistic regression (IRLS with
step-halving).  Weights can be stabilized by the marginal treatment
proportion and trimmed to a fixed interval; balance is reported as
standardized mean differences before and after weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import Cohort
from .errors import NotConverged, NoVariation, RankDeficient, Separation, ZeroVariance

MAX_ITER = 100
GRAD_TOL = 1e-8
MAX_ABS_COEF = 30.0


@dataclass
class PropensityModel:
    coefficients: np.ndarray  # intercept first
    converged: bool
    iterations: int
    gradient_norm: float

    def predict(self, cohort: Cohort) -> np.ndarray:
        """Treatment probabilities for every subject."""
        X = _design(cohort)
        return expit(X @ self.coefficients)


def _design(cohort: Cohort) -> np.ndarray:
    return np.column_stack([np.ones(cohort.n), cohort.z])


def fit_logistic(cohort: Cohort) -> PropensityModel:
    """Weighted maximum-likelihood logistic regression of A on (1, Z).

    The cohort's prior weights enter the Bernoulli log-likelihood, so a
    Bayesian-bootstrap reweighted cohort refits its treatment model exactly
    as the resampling scheme requires.  Raises ``NoVariation`` when one arm
    is empty, ``RankDeficient`` for a singular design and ``Separation``
    when the estimate diverges (|coef| > 30).
    """
    y = cohort.a.astype(float)
    w = cohort.weight
    if y.min() == y.max():
        raise NoVariation("cohort has a single treatment arm")
    X = _design(cohort)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficient("design matrix is rank deficient")

    beta = np.zeros(X.shape[1])
    ll = _bernoulli_loglik(X, y, w, beta)
    grad_norm = np.inf
    for it in range(1, MAX_ITER + 1):
        p = expit(X @ beta)
        grad = X.T @ (w * (y - p))
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= GRAD_TOL:
            return PropensityModel(beta, True, it - 1, grad_norm)
        H = X.T @ (X * (w * p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("singular information in IRLS") from exc
        new_beta = beta + step
        for _ in range(30):
            new_ll = _bernoulli_loglik(X, y, w, new_beta)
            if new_ll >= ll - 1e-12:
                break
            step /= 2.0
            new_beta = beta + step
        if np.max(np.abs(new_beta)) > MAX_ABS_COEF:
            raise Separation("coefficients diverging; data are separated")
        beta, ll = new_beta, new_ll
    raise NotConverged(f"IRLS did not converge in {MAX_ITER} iterations")


def _bernoulli_loglik(X, y, w, beta):
    eta = X @ beta
    # log(p) = -log(1+e^-eta), log(1-p) = -log(1+e^eta), stable via logaddexp
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def ip_weights(model: PropensityModel, cohort: Cohort, stabilized=False, trim=None) -> np.ndarray:
    """Inverse-probability-of-treatment weights.

    Unstabilized: A/pi + (1-A)/(1-pi).  Stabilization multiplies each arm by
    its marginal (weight-averaged) treatment proportion; trimming clamps the
    result into [lo, hi] afterwards.
    """
    if not model.converged:
        raise NotConverged("propensity model did not converge")
    pi = model.predict(cohort)
    a = cohort.a.astype(float)
    w = a / pi + (1.0 - a) / (1.0 - pi)
    if stabilized:
        p_treated = float(np.average(a, weights=cohort.weight))
        w *= np.where(a == 1, p_treated, 1.0 - p_treated)
    if trim is not None:
        lo, hi = trim
        w = np.clip(w, lo, hi)
    return w


def smd(cohort: Cohort, weights) -> pd.DataFrame:
    """Standardized mean differences per covariate, raw and weighted.

    SMD_j = (mean of z_j among treated - among controls) / pooled raw SD,
    with the numerator computed under unit weights (``smd_raw``) and under
    the supplied weights (``smd_weighted``).  The pooled SD is the root mean
    of the two arms' unweighted sample variances.
    """
    weights = np.asarray(weights, dtype=float)
    treated = cohort.a == 1
    rows = []
    for j in range(cohort.n_covariates):
        zj = cohort.z[:, j]
        s1 = np.var(zj[treated], ddof=1)
        s0 = np.var(zj[~treated], ddof=1)
        pooled = np.sqrt((s1 + s0) / 2.0)
        if pooled == 0:
            raise ZeroVariance(f"covariate z{j + 1} is constant")
        raw = (zj[treated].mean() - zj[~treated].mean()) / pooled
        weighted = (
            np.average(zj[treated], weights=weights[treated])
            - np.average(zj[~treated], weights=weights[~treated])
        ) / pooled
        rows.append((f"z{j + 1}", raw, weighted))
    return pd.DataFrame(rows, columns=["covariate", "smd_raw", "smd_weighted"])
