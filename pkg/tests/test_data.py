import numpy as np
import pytest
from hypothesis import given, strategies as st

from idmsm import (
    StepFunction,
    SubjectRecord,
    build_transition_data,
    read_cohort_csv,
    resolve_ties,
    validate_cohort,
    write_cohort_csv,
)
from idmsm.errors import (
    InconsistentIndicators,
    NonFiniteValue,
    NonPositiveTime,
    UnknownTransition,
)
from conftest import random_cohort


def subj(id="s", x1=1.0, x2=2.0, d1=1, d2=1, a=0, z=(0.0,), w=1.0):
    return SubjectRecord(id=id, x1=x1, x2=x2, delta1=d1, delta2=d2, a=a, z=z, weight=w)


class TestValidation:
    def test_scenario_classification(self):
        cohort = validate_cohort([
            subj("a", 2, 5, 1, 1),   # ill then dead
            subj("b", 4, 4, 0, 0),   # censored
            subj("c", 3, 3, 0, 1),   # dead without illness
            subj("d", 1, 2, 1, 0),   # ill then censored
        ])
        assert cohort.scenario_counts == {
            "ill_then_censored": 1,
            "ill_then_dead": 1,
            "dead_without_illness": 1,
            "censored": 1,
        }

    def test_ordering_violation(self):
        with pytest.raises(InconsistentIndicators, match="x"):
            validate_cohort([subj("bad", 3, 2)])

    def test_censored_with_distinct_times(self):
        with pytest.raises(InconsistentIndicators, match="bad"):
            validate_cohort([subj("bad", 3, 4, d1=0, d2=1)])

    def test_nonpositive_time_names_subject(self):
        with pytest.raises(NonPositiveTime, match="neg"):
            validate_cohort([subj("neg", -1, 2)])

    def test_nonfinite_value(self):
        with pytest.raises(NonFiniteValue, match="nan"):
            validate_cohort([subj("nan", np.nan, 2)])
        with pytest.raises(NonFiniteValue, match="w0"):
            validate_cohort([subj("w0", 1, 2, w=0.0)])

    def test_tie_resolution_deterministic(self):
        records = [subj("t", 1.0, 1.0, 1, 1), subj("u", 1.5, 2.0, 1, 1)]
        fixed = resolve_ties(records)
        # half the smallest gap among distinct observed times {1.0, 1.5, 2.0}
        assert fixed[0].x2 == pytest.approx(1.25)
        assert fixed[1].x2 == 2.0
        assert resolve_ties(records)[0].x2 == fixed[0].x2
        cohort = validate_cohort(records)
        assert cohort.x2[0] > cohort.x1[0]


class TestTransitions:
    def test_dead_without_illness_rows(self):
        cohort = validate_cohort([subj("c", 3, 3, 0, 1)])
        t1 = build_transition_data(cohort, 1)
        t2 = build_transition_data(cohort, 2)
        t3 = build_transition_data(cohort, 3)
        assert (t1[0].entry, t1[0].exit, t1[0].event) == (0.0, 3.0, 0)
        assert (t2[0].entry, t2[0].exit, t2[0].event) == (0.0, 3.0, 1)
        assert t3 == []

    def test_ill_then_dead_left_truncation(self):
        cohort = validate_cohort([subj("a", 2, 5, 1, 1)])
        (rec,) = build_transition_data(cohort, 3)
        assert (rec.entry, rec.exit, rec.event) == (2.0, 5.0, 1)

    def test_censored_absent_from_transition3(self):
        cohort = validate_cohort([subj("b", 4, 4, 0, 0)])
        assert build_transition_data(cohort, 1)[0].event == 0
        assert build_transition_data(cohort, 2)[0].event == 0
        assert build_transition_data(cohort, 3) == []

    def test_unknown_transition(self):
        cohort = validate_cohort([subj()])
        with pytest.raises(UnknownTransition):
            build_transition_data(cohort, 4)

    def test_event_count_identities(self):
        rng = np.random.default_rng(5)
        cohort = validate_cohort(random_cohort(rng, n=120))
        d1, d2 = cohort.delta1, cohort.delta2
        counts = [
            sum(r.event for r in build_transition_data(cohort, j)) for j in (1, 2, 3)
        ]
        assert counts[0] == d1.sum()
        assert counts[1] == (d2 * (1 - d1)).sum()
        assert counts[2] == (d1 * d2).sum()

    def test_weights_preserved_exactly(self):
        rng = np.random.default_rng(6)
        cohort = validate_cohort(random_cohort(rng, n=30))
        for j in (1, 2, 3):
            for rec in build_transition_data(cohort, j):
                assert rec.weight == cohort.weight[rec.index]


class TestStepFunction:
    def test_basic_evaluation(self):
        f = StepFunction([1.0, 2.0, 3.0], [0.5, 0.25, 1.0])
        assert f.evaluate(0) == 0.0
        assert f.evaluate(1.0) == 0.5
        assert f.evaluate(2.5) == 0.75
        assert f.evaluate_before(2.0) == 0.5
        np.testing.assert_allclose(f.evaluate([0.5, 3.0]), [0.0, 1.75])

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            StepFunction([2.0, 1.0], [0.1, 0.1])
        with pytest.raises(ValueError):
            StepFunction([1.0], [-0.1])

    @given(st.lists(st.tuples(st.floats(0.01, 100), st.floats(0, 5)),
                    min_size=1, max_size=30))
    def test_monotone(self, jumps):
        times = np.unique([t for t, _ in jumps])
        incs = np.abs([v for _, v in jumps])[: len(times)]
        f = StepFunction(times, incs)
        grid = np.sort(np.concatenate([times, times / 2, times * 1.5]))
        vals = f.evaluate(grid)
        assert np.all(np.diff(vals) >= 0)
        assert f.evaluate(0.0) == 0.0


class TestCsv:
    def test_round_trip_and_column_order(self, tmp_path):
        rng = np.random.default_rng(7)
        records = random_cohort(rng, n=10, p=3)
        path = tmp_path / "cohort.csv"
        write_cohort_csv(path, records, include_weight=True)
        header = path.read_text().splitlines()[0]
        assert header == "id,x1,x2,delta1,delta2,a,z1,z2,z3,weight"
        back = read_cohort_csv(path)
        for orig, rec in zip(records, back):
            assert rec.id == orig.id
            assert rec.x1 == pytest.approx(orig.x1)
            assert rec.z == pytest.approx(orig.z)
            assert rec.weight == pytest.approx(orig.weight)

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,x1,x2,delta1,a,z1\n1,1,2,1,0,0.5\n")
        with pytest.raises(InconsistentIndicators, match="delta2"):
            read_cohort_csv(path)
