"""Core data structures for semi-competing risks cohorts.

A subject contributes two observation times: ``x1`` for the non-terminal
event (or whatever stopped its observation first) and ``x2`` for the
terminal event (or censoring), with ``x1 <= x2``.  The three transitions of
the illness-death model are derived from these:

1. healthy -> ill          (time x1, event ``delta1``)
2. healthy -> dead         (time x1, event ``delta2 * (1 - delta1)``)
3. ill -> dead             (entry x1, exit x2, event ``delta1 * delta2``,
                            present only for subjects with ``delta1 = 1``)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    InconsistentIndicators,
    NonFiniteValue,
    NonPositiveTime,
    UnknownTransition,
)

SCENARIOS = ("ill_then_censored", "ill_then_dead", "dead_without_illness", "censored")


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's semi-competing risks observation.

    ``z`` holds the confounder values used by the treatment model; ``weight``
    is a prior observation weight (1 for ordinary data, the normalized
    exponential draw under the Bayesian bootstrap).
    """

    id: str
    x1: float
    x2: float
    delta1: int
    delta2: int
    a: int
    z: tuple[float, ...] = ()
    weight: float = 1.0


@dataclass(frozen=True)
class TransitionRecord:
    """One subject's contribution to a single transition-specific risk set.

    A subject is at risk at time t iff ``entry < t <= exit``; ``offset`` is
    added to the linear predictor of the transition hazard.
    """

    id: str
    index: int
    entry: float
    exit: float
    event: int
    a: int
    weight: float
    offset: float = 0.0


class StepFunction:
    """Nondecreasing step function stored as jump times and increments.

    ``evaluate(t)`` sums all increments with jump time <= t, so the function
    is right-continuous with ``evaluate(0) = 0``.
    """

    def __init__(self, times, increments):
        times = np.asarray(times, dtype=float)
        increments = np.asarray(increments, dtype=float)
        if times.shape != increments.shape or times.ndim != 1:
            raise ValueError("times and increments must be 1-d of equal length")
        if times.size:
            if np.any(times <= 0) or np.any(np.diff(times) <= 0):
                raise ValueError("jump times must be positive and strictly increasing")
            if np.any(increments < 0):
                raise ValueError("increments must be nonnegative")
        self.times = times
        self.increments = increments
        self._cum = np.concatenate([[0.0], np.cumsum(increments)])

    def evaluate(self, t):
        """Cumulative value at time(s) t (right-continuous)."""
        idx = np.searchsorted(self.times, t, side="right")
        return self._cum[idx]

    def evaluate_before(self, t):
        """Left limit: sum of increments with jump time strictly below t."""
        idx = np.searchsorted(self.times, t, side="left")
        return self._cum[idx]

    def __call__(self, t):
        return self.evaluate(t)

    @property
    def total(self):
        return float(self._cum[-1])

    def to_dict(self):
        return {"times": self.times.tolist(), "increments": self.increments.tolist()}

    @classmethod
    def zero(cls):
        return cls(np.empty(0), np.empty(0))


@dataclass(frozen=True)
class Cohort:
    """Validated, columnar view of a list of :class:`SubjectRecord`.

    Arrays are aligned by subject position; ``ids`` may contain duplicates
    (bootstrap resamples do), so all numerics key on position, never on id.
    """

    ids: tuple[str, ...]
    x1: np.ndarray
    x2: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    a: np.ndarray
    z: np.ndarray
    weight: np.ndarray
    scenario_counts: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_covariates(self) -> int:
        return self.z.shape[1]

    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(
                id=self.ids[i],
                x1=float(self.x1[i]),
                x2=float(self.x2[i]),
                delta1=int(self.delta1[i]),
                delta2=int(self.delta2[i]),
                a=int(self.a[i]),
                z=tuple(self.z[i]),
                weight=float(self.weight[i]),
            )
            for i in range(self.n)
        ]

    def take(self, idx) -> "Cohort":
        """Row subset/resample by position (no re-validation needed)."""
        idx = np.asarray(idx, dtype=int)
        sub = Cohort(
            ids=tuple(self.ids[i] for i in idx),
            x1=self.x1[idx],
            x2=self.x2[idx],
            delta1=self.delta1[idx],
            delta2=self.delta2[idx],
            a=self.a[idx],
            z=self.z[idx],
            weight=self.weight[idx],
        )
        object.__setattr__(sub, "scenario_counts", _count_scenarios(sub.delta1, sub.delta2))
        return sub

    def with_weights(self, weight) -> "Cohort":
        """Copy of the cohort with the prior weight column replaced."""
        weight = np.asarray(weight, dtype=float)
        if weight.shape != (self.n,):
            raise ValueError("weight vector length must match cohort size")
        if not np.all(np.isfinite(weight)) or np.any(weight <= 0):
            raise NonFiniteValue("weights must be positive and finite")
        return replace(self, weight=weight)


def _count_scenarios(delta1, delta2):
    return {
        "ill_then_censored": int(np.sum((delta1 == 1) & (delta2 == 0))),
        "ill_then_dead": int(np.sum((delta1 == 1) & (delta2 == 1))),
        "dead_without_illness": int(np.sum((delta1 == 0) & (delta2 == 1))),
        "censored": int(np.sum((delta1 == 0) & (delta2 == 0))),
    }


def resolve_ties(records: Sequence[SubjectRecord]) -> list[SubjectRecord]:
    """Break exact x1 == x2 ties for subjects observed to pass through illness.

    The continuous-time model forbids the two transition times of the
    0 -> 1 -> 2 path from coinciding, so x2 is nudged upward by half the
    smallest positive gap between distinct observed times.  Deterministic,
    so repeated runs agree.
    """
    tied = [r for r in records if r.delta1 == 1 and r.x1 == r.x2]
    if not tied:
        return list(records)
    times = np.unique(
        np.concatenate([[r.x1 for r in records], [r.x2 for r in records]])
    )
    gaps = np.diff(times)
    gaps = gaps[gaps > 0]
    # Degenerate cohorts with a single distinct time fall back to that time.
    eps = 0.5 * float(gaps.min()) if gaps.size else 0.5 * float(times[0])
    return [
        replace(r, x2=r.x2 + eps) if (r.delta1 == 1 and r.x1 == r.x2) else r
        for r in records
    ]


def validate_cohort(records: Sequence[SubjectRecord]) -> Cohort:
    """Check the subject-level invariants and return a columnar cohort.

    Raises :class:`NonPositiveTime`, :class:`NonFiniteValue` or
    :class:`InconsistentIndicators` naming the first offending subject.
    Exact x1 == x2 ties for delta1 = 1 subjects are resolved first (see
    :func:`resolve_ties`).
    """
    if not records:
        raise InconsistentIndicators("empty cohort")
    records = resolve_ties(records)
    for r in records:
        vals = (r.x1, r.x2, r.weight, *r.z)
        if not all(np.isfinite(v) for v in vals):
            raise NonFiniteValue(f"subject {r.id!r}: non-finite value")
        if r.x1 <= 0 or r.x2 <= 0:
            raise NonPositiveTime(f"subject {r.id!r}: times must be positive")
        if r.weight <= 0:
            raise NonFiniteValue(f"subject {r.id!r}: weight must be positive")
        if r.delta1 not in (0, 1) or r.delta2 not in (0, 1) or r.a not in (0, 1):
            raise InconsistentIndicators(
                f"subject {r.id!r}: delta1, delta2, a must be 0/1"
            )
        if r.x1 > r.x2:
            raise InconsistentIndicators(f"subject {r.id!r}: x1 > x2")
        if r.delta1 == 0 and r.x1 != r.x2:
            raise InconsistentIndicators(
                f"subject {r.id!r}: delta1 = 0 requires x1 = x2"
            )
    p = len(records[0].z)
    if any(len(r.z) != p for r in records):
        raise InconsistentIndicators("all subjects must share the covariate length")
    delta1 = np.array([r.delta1 for r in records])
    delta2 = np.array([r.delta2 for r in records])
    cohort = Cohort(
        ids=tuple(r.id for r in records),
        x1=np.array([r.x1 for r in records], dtype=float),
        x2=np.array([r.x2 for r in records], dtype=float),
        delta1=delta1,
        delta2=delta2,
        a=np.array([r.a for r in records]),
        z=np.array([r.z for r in records], dtype=float).reshape(len(records), p),
        weight=np.array([r.weight for r in records], dtype=float),
        scenario_counts=_count_scenarios(delta1, delta2),
    )
    return cohort


def build_transition_data(cohort: Cohort, transition: int) -> list[TransitionRecord]:
    """Risk-set records for one transition of the illness-death model.

    Transition 3 is left truncated at the illness time and contains exactly
    the subjects with ``delta1 = 1``.  Weights are carried over unchanged;
    offsets start at zero.
    """
    if transition not in (1, 2, 3):
        raise UnknownTransition(f"transition must be 1, 2 or 3, got {transition!r}")
    out = []
    for i in range(cohort.n):
        if transition == 1:
            rec = TransitionRecord(
                cohort.ids[i], i, 0.0, float(cohort.x1[i]),
                int(cohort.delta1[i]), int(cohort.a[i]), float(cohort.weight[i]),
            )
        elif transition == 2:
            rec = TransitionRecord(
                cohort.ids[i], i, 0.0, float(cohort.x1[i]),
                int(cohort.delta2[i] * (1 - cohort.delta1[i])),
                int(cohort.a[i]), float(cohort.weight[i]),
            )
        else:
            if cohort.delta1[i] != 1:
                continue
            rec = TransitionRecord(
                cohort.ids[i], i, float(cohort.x1[i]), float(cohort.x2[i]),
                int(cohort.delta1[i] * cohort.delta2[i]),
                int(cohort.a[i]), float(cohort.weight[i]),
            )
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# CSV interface: header `id,x1,x2,delta1,delta2,a,z1,...,zp[,weight]`
# ---------------------------------------------------------------------------

_FIXED_COLUMNS = ["id", "x1", "x2", "delta1", "delta2", "a"]


def read_cohort_csv(path) -> list[SubjectRecord]:
    """Read subject records from the package CSV schema."""
    df = pd.read_csv(path)
    missing = [c for c in _FIXED_COLUMNS if c not in df.columns]
    if missing:
        raise InconsistentIndicators(f"missing column(s): {', '.join(missing)}")
    zcols = sorted(
        (c for c in df.columns if c.startswith("z") and c[1:].isdigit()),
        key=lambda c: int(c[1:]),
    )
    has_weight = "weight" in df.columns
    records = []
    for row in df.itertuples(index=False):
        d = row._asdict()
        records.append(
            SubjectRecord(
                id=str(d["id"]),
                x1=float(d["x1"]),
                x2=float(d["x2"]),
                delta1=int(d["delta1"]),
                delta2=int(d["delta2"]),
                a=int(d["a"]),
                z=tuple(float(d[c]) for c in zcols),
                weight=float(d["weight"]) if has_weight else 1.0,
            )
        )
    return records


def write_cohort_csv(path, records: Sequence[SubjectRecord], include_weight=False):
    """Write subject records in the fixed column order (diffable output)."""
    p = len(records[0].z) if records else 0
    cols = _FIXED_COLUMNS + [f"z{j + 1}" for j in range(p)]
    if include_weight:
        cols.append("weight")
    rows = []
    for r in records:
        row = [r.id, r.x1, r.x2, r.delta1, r.delta2, r.a, *r.z]
        if include_weight:
            row.append(r.weight)
        rows.append(row)
    pd.DataFrame(rows, columns=cols).to_csv(path, index=False)
