import numpy as np
import pytest

from idmsm import validate_cohort
from idmsm.simulate import SimConfig, generate


@pytest.fixture(scope="session")
def sim_cohort():
    """One medium default-scenario cohort shared across read-only tests."""
    records, truth = generate(SimConfig(n=400, sigma2=1.0, seed=99))
    return validate_cohort(records), truth


@pytest.fixture(scope="session")
def sim_cohort_nofrailty():
    records, truth = generate(SimConfig(n=400, sigma2=0.0, seed=17))
    return validate_cohort(records), truth


def random_cohort(rng, n=40, p=2):
    """Small hand-rolled cohort exercising all four observation shapes."""
    from idmsm.data import SubjectRecord

    records = []
    for i in range(n):
        x1 = float(rng.uniform(0.1, 2.0))
        shape = rng.integers(0, 4)
        if shape == 0:      # ill then censored
            x2, d1, d2 = x1 + float(rng.uniform(0.05, 1.0)), 1, 0
        elif shape == 1:    # ill then dead
            x2, d1, d2 = x1 + float(rng.uniform(0.05, 1.0)), 1, 1
        elif shape == 2:    # dead without illness
            x2, d1, d2 = x1, 0, 1
        else:               # censored
            x2, d1, d2 = x1, 0, 0
        records.append(SubjectRecord(
            id=str(i), x1=x1, x2=x2, delta1=d1, delta2=d2,
            a=int(rng.integers(0, 2)),
            z=tuple(rng.normal(size=p)),
            weight=float(rng.uniform(0.5, 2.0)),
        ))
    return records
