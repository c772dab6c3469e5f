"""Marginal structural illness-death models for semi-competing risks data.

Fits the usual Markov model (three IP-weighted Cox regressions with a joint
robust covariance) and the general Markov model (shared log-normal frailty,
weighted EM), computes marginal and conditional cumulative-incidence
contrasts, and ships a matching cohort simulator and bootstrap machinery.
"""

__version__ = "0.1.0"

from .data import (
    Cohort,
    StepFunction,
    SubjectRecord,
    TransitionRecord,
    build_transition_data,
    read_cohort_csv,
    resolve_ties,
    validate_cohort,
    write_cohort_csv,
)
from .cox import (
    CoxFit,
    breslow_baseline,
    fit_transitions,
    fit_weighted_cox,
    sandwich_variance,
)
from .propensity import PropensityModel, fit_logistic, ip_weights, smd
from .usual import (
    ContrastSeries,
    RiskCurve,
    UsualMarkovFit,
    cif,
    default_grid,
    default_t1,
    fit_usual_markov,
    risk_contrast,
    risk_curve,
    survival,
)
from .frailty import (
    EMControls,
    GeneralMarkovFit,
    ModelParams,
    PosteriorMoments,
    conditional_cif,
    conditional_loglik,
    e_step,
    fit_general_markov,
    individual_contrasts,
    m_step,
    observed_loglik,
    predict_b,
)
from .resample import (
    BayesianBootstrapResult,
    BootstrapPlan,
    BootstrapResult,
    bayesian_bootstrap,
    bootstrap,
)
from .simulate import (
    Lambda01_inverse,
    Lambda01_truth,
    Lambda03_truth,
    SimConfig,
    generate,
    lambda01_truth,
    lambda03_truth,
)

__all__ = [name for name in dir() if not name.startswith("_")]
