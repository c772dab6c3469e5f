import dataclasses

import numpy as np
import pytest

from idmsm import (
    SubjectRecord,
    cif,
    default_grid,
    default_t1,
    fit_logistic,
    fit_usual_markov,
    ip_weights,
    risk_contrast,
    risk_curve,
    survival,
    validate_cohort,
)
from idmsm.errors import GridBeforeT1, NoEvents
from idmsm.simulate import SimConfig, generate, Lambda01_truth, lambda01_truth
from conftest import random_cohort
from oracles import f1_truth


@pytest.fixture(scope="module")
def fitted(sim_cohort_nofrailty):
    cohort, _ = sim_cohort_nofrailty
    w = ip_weights(fit_logistic(cohort), cohort)
    return cohort, fit_usual_markov(cohort, w)


class TestFit:
    def test_recovers_truth_within_noise(self):
        records, _ = generate(SimConfig(n=500, sigma2=0.0, seed=101))
        cohort = validate_cohort(records)
        w = ip_weights(fit_logistic(cohort), cohort)
        fit = fit_usual_markov(cohort, w)
        # single replicate: allow 3 Monte Carlo SDs around the truth
        assert abs(fit.beta[0] - 1.0) < 3 * 0.15
        assert abs(fit.beta[1] - 1.0) < 3 * 0.15
        assert abs(fit.beta[2] - 0.5) < 3 * 0.17

    def test_no_illness_events_raises(self):
        records = [
            SubjectRecord(str(i), 1.0 + i / 10, 1.0 + i / 10, 0, i % 2, i % 2, (0.0,))
            for i in range(20)
        ]
        cohort = validate_cohort(records)
        with pytest.raises(NoEvents):
            fit_usual_markov(cohort)

    def test_weight_scale_invariance(self, fitted):
        cohort, fit = fitted
        w = ip_weights(fit_logistic(cohort), cohort)
        fit2 = fit_usual_markov(cohort, 2.0 * w)
        np.testing.assert_allclose(fit2.beta, fit.beta, atol=1e-9)


class TestCif:
    def test_partition_of_probability(self, fitted):
        _, fit = fitted
        grid = np.linspace(0.01, 0.8, 60)
        for a in (0, 1):
            f1 = cif(fit, "f1", a, grid)
            f2 = cif(fit, "f2", a, grid)
            s = survival(fit, a, grid)
            np.testing.assert_allclose(f1 + f2 + s, 1.0, atol=1e-10)

    def test_monotone_and_bounded(self, fitted):
        _, fit = fitted
        grid = np.linspace(0.0, 1.0, 50)
        for a in (0, 1):
            f1 = cif(fit, "f1", a, grid)
            f2 = cif(fit, "f2", a, grid)
            s = survival(fit, a, grid)
            for arr in (f1, f2):
                assert np.all(np.diff(arr) >= -1e-12)
                assert np.all((arr >= 0) & (arr <= 1))
            assert np.all(np.diff(s) <= 1e-12)

    def test_f12_zero_at_t1(self, fitted):
        _, fit = fitted
        t1 = 0.3
        vals = cif(fit, "f12", 1, [t1, 0.5], t1=t1)
        assert vals[0] == 0.0

    def test_f12_grid_before_t1(self, fitted):
        _, fit = fitted
        with pytest.raises(GridBeforeT1):
            cif(fit, "f12", 0, [0.1, 0.5], t1=0.3)

    def test_reference_arm_ignores_beta(self, fitted):
        _, fit = fitted
        grid = np.linspace(0.05, 0.8, 30)
        patched = dataclasses.replace(fit)
        for f, zeroed in zip(patched.fits, fit.fits):
            object.__setattr__(f, "beta", 0.0) if False else None
        altered = dataclasses.replace(
            fit, fits=tuple(dataclasses.replace(f, beta=f.beta + 5.0) for f in fit.fits)
        )
        np.testing.assert_allclose(
            cif(fit, "f1", 0, grid), cif(altered, "f1", 0, grid), atol=0
        )

    def test_constant_hazard_limit(self):
        # lambda01 = lambda02 = 1, beta = 0: F1(t) -> (1 - e^{-2t}) / 2
        rng = np.random.default_rng(404)
        n = 5000
        records = []
        for i in range(n):
            first = rng.exponential(1 / 2)
            c = 3.0
            if rng.random() < 0.5:
                t1 = first
                t2 = t1 + rng.exponential(1.0)
            else:
                t1 = np.inf
                t2 = first
            x2 = min(t2, c)
            x1 = min(t1, x2)
            records.append(SubjectRecord(
                str(i), x1, x2, int(x1 == t1), int(x2 == t2),
                int(rng.random() < 0.5), ()
            ))
        cohort = validate_cohort(records)
        fit = fit_usual_markov(cohort)
        for t in (0.3, 0.7, 1.0):
            expected = 0.5 * (1.0 - np.exp(-2.0 * t))
            got = cif(fit, "f1", 0, [t])[0]
            assert got == pytest.approx(expected, abs=0.02)


class TestContrast:
    def test_null_betas_give_null_contrasts(self, fitted):
        _, fit = fitted
        nulled = dataclasses.replace(
            fit, fits=tuple(dataclasses.replace(f, beta=0.0) for f in fit.fits)
        )
        grid = np.linspace(0.05, 0.8, 20)
        series = risk_contrast(nulled, "f1", grid)
        np.testing.assert_allclose(series.rd, 0.0, atol=1e-14)
        np.testing.assert_allclose(series.rr, 1.0, atol=1e-14)

    def test_rd_zero_before_first_event(self, fitted):
        _, fit = fitted
        first_event = fit.fits[0].baseline.times[0]
        grid = np.array([first_event / 2, 0.5])
        series = risk_contrast(fit, "f1", grid)
        assert series.rd[0] == 0.0
        assert np.isnan(series.rr[0])  # 0/0 undefined at the start

    def test_rd_matches_true_parameter_quadrature(self):
        records, _ = generate(SimConfig(n=5000, sigma2=0.0, seed=77))
        cohort = validate_cohort(records)
        w = ip_weights(fit_logistic(cohort), cohort)
        fit = fit_usual_markov(cohort, w)
        t = 0.3
        series = risk_contrast(fit, "f1", [t])
        beta = (1.0, 1.0, 0.5)
        expected = f1_truth(t, 1, beta, lambda01_truth, Lambda01_truth) - f1_truth(
            t, 0, beta, lambda01_truth, Lambda01_truth
        )
        assert series.rd[0] == pytest.approx(expected, abs=0.02)

    def test_f12_ratio_closed_form(self, fitted):
        _, fit = fitted
        t1, t = 0.2, 0.6
        series = risk_contrast(fit, "f12", [t], t1=t1)
        gap = fit.baselines[2].evaluate(t) - fit.baselines[2].evaluate(t1)
        b3 = fit.beta[2]
        expected = (1.0 - np.exp(-np.exp(b3) * gap)) / (1.0 - np.exp(-gap))
        assert series.rr[0] == pytest.approx(expected, rel=1e-12)


class TestDefaults:
    def test_default_grid_support(self, fitted):
        cohort, _ = fitted
        grid = default_grid(cohort)
        assert np.all(np.diff(grid) > 0)
        assert grid.max() <= np.quantile(cohort.x2, 0.95)

    def test_default_t1_median(self, fitted):
        cohort, _ = fitted
        t1 = default_t1(cohort)
        ill = cohort.x1[cohort.delta1 == 1]
        assert t1 == pytest.approx(np.median(ill))

    def test_risk_curve_carries_both_arms(self, fitted):
        _, fit = fitted
        grid = np.linspace(0.05, 0.6, 10)
        curve = risk_curve(fit, "f1", grid)
        np.testing.assert_allclose(curve.a0, cif(fit, "f1", 0, grid))
        np.testing.assert_allclose(curve.a1, cif(fit, "f1", 1, grid))
