import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seroprev.model import (
    HEYWOOD,
    RESTRICTED,
    TRUNCATED_POINT,
    VARIANCE_UNDEFINED,
    InputError,
    MainStudy,
    Method,
    PrevalenceEstimate,
    RegressionSpec,
    SampleFractions,
    StratumTable,
    ValidationStudy,
    from_counts,
)


class TestValidationStudy:
    def test_screening_counts(self):
        v = from_counts(40, 40, 277, 274)
        assert v.sensitivity == 1.0
        assert v.specificity == pytest.approx(274 / 277)
        assert round(v.specificity, 3) == 0.989

    def test_zero_sensitivity_is_representable(self):
        assert ValidationStudy(10, 0, 10, 10).sensitivity == 0.0

    @pytest.mark.parametrize("args,field", [
        ((10, 11, 10, 10), "x_sens_pos"),
        ((10, 5, 10, 11), "x_spec_neg"),
        ((0, 0, 10, 5), "n_sens"),
        ((10, -1, 10, 5), "x_sens_pos"),
        ((10, 5, 10, 2.5), "x_spec_neg"),
    ])
    def test_bound_violation_names_field(self, args, field):
        with pytest.raises(InputError, match=field):
            ValidationStudy(*args)

    @given(st.integers(1, 10_000).flatmap(
        lambda n1: st.tuples(st.just(n1), st.integers(0, n1))),
        st.integers(1, 10_000).flatmap(lambda n2: st.tuples(st.just(n2), st.integers(0, n2))))
    def test_round_trip(self, sens, spec):
        v = ValidationStudy(*sens, *spec)
        assert ValidationStudy.from_dict(json.loads(json.dumps(v.to_dict()))) == v


class TestStratumTable:
    def test_rejects_bad_sum(self):
        with pytest.raises(InputError, match="sum"):
            StratumTable(("a", "b"), [0.5, 0.5 + 2e-10])

    def test_accepts_sum_within_tolerance(self):
        StratumTable(("a", "b"), [0.5, 0.5 + 5e-11])

    @pytest.mark.parametrize("g", [[1.0, 0.0], [1.2, -0.2], [float("nan"), 1.0]])
    def test_rejects_non_positive(self, g):
        with pytest.raises(InputError):
            StratumTable(("a", "b"), g)

    def test_rejects_duplicates(self):
        with pytest.raises(InputError, match="duplicate"):
            StratumTable(("a", "a"), [0.5, 0.5])

    def test_immutable(self):
        t = StratumTable(("a", "b"), [0.25, 0.75])
        with pytest.raises(ValueError):
            t.gammas[0] = 0.5

    @given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30))
    def test_normalized_round_trip(self, w):
        t = StratumTable.normalized([f"z{i}" for i in range(len(w))], w)
        assert math.fsum(t.gammas) == pytest.approx(1.0, abs=1e-12)
        assert StratumTable.from_dict(json.loads(json.dumps(t.to_dict()))) == t


class TestMainStudy:
    def test_tally_in_table_order(self):
        m = MainStudy.from_records([(1, "b"), (0, "b"), (1, "a"), (0, "c")])
        t = StratumTable(("a", "b", "c", "d"), [0.25] * 4)
        n_j, pos_j = m.tally(t)
        assert n_j.tolist() == [1, 2, 1, 0]
        assert pos_j.tolist() == [1, 1, 0, 0]

    def test_unknown_label(self):
        m = MainStudy.from_records([(1, "a"), (0, "zzz")])
        with pytest.raises(InputError, match="zzz"):
            m.tally(StratumTable(("a",), [1.0]))

    def test_missing_label_rejected_for_standardization(self):
        m = MainStudy.from_records([(1, "a"), (0, None)])
        assert m.has_missing_strata
        with pytest.raises(InputError):
            m.tally(StratumTable(("a",), [1.0]))

    def test_unstratified(self):
        m = MainStudy.unstratified(24, 2973)
        assert (m.n, m.positives) == (2973, 24)

    @given(st.lists(st.tuples(st.integers(0, 1),
                              st.one_of(st.none(), st.sampled_from(["F|0-9", "M|10-19", "x"]))),
                    min_size=1, max_size=50))
    def test_round_trip(self, records):
        m = MainStudy.from_records(records)
        back = MainStudy.from_dict(json.loads(json.dumps(m.to_dict())))
        assert back == m
        assert back.records() == [(x, z) for x, z in records]


def test_sample_fractions():
    f = SampleFractions.from_sizes(40, 250, 2500)
    assert f.c1 + f.c2 + f.c3 == pytest.approx(1.0)
    assert f.c3 == pytest.approx(2500 / 2790)


def test_regression_spec_requires_intercept():
    spec = RegressionSpec.from_matrix(("a", "b"), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(InputError, match="intercept"):
        spec.design(("a", "b"))


def test_saturated_spec_design():
    H = RegressionSpec.saturated(("a", "b", "c")).design(("a", "b", "c"))
    assert H.tolist() == [[1, 0, 0], [1, 1, 0], [1, 0, 1]]


finite_or_not = st.one_of(st.floats(allow_nan=True, allow_infinity=False), st.none())


class TestPrevalenceEstimate:
    @given(st.floats(allow_nan=True, allow_infinity=False), finite_or_not,
           st.booleans(), st.booleans())
    def test_build_is_total(self, raw, var, with_ci, dropped):
        est = PrevalenceEstimate.build(Method.RG, raw, variance=var,
                                       ci=(0.0, 0.5) if with_ci else None,
                                       dropped_strata=("z",) if dropped else ())
        assert est.point_raw == raw or (math.isnan(raw) and math.isnan(est.point_raw))
        if not math.isnan(raw):
            assert 0.0 <= est.point <= 1.0
            assert (TRUNCATED_POINT in est.flags) == (not 0.0 <= raw <= 1.0)
        if var is not None and var < 0:
            assert HEYWOOD in est.flags and est.ci_low is None
        if var is not None and math.isnan(var):
            assert VARIANCE_UNDEFINED in est.flags and est.ci_low is None
        assert (RESTRICTED in est.flags) == dropped
        back = PrevalenceEstimate.from_json(est.to_json())
        assert back.flags == est.flags
        assert back.ci_low == est.ci_low

    def test_json_round_trip_full_precision(self):
        est = PrevalenceEstimate.build(Method.SRG, -0.0027878645041, 4.2279e-05,
                                       ci=(0.0, 0.00995634123456789),
                                       dropped_strata=("a|b",), details={"rho": 1 / 3})
        assert PrevalenceEstimate.from_json(est.to_json()) == est

    def test_covers(self):
        est = PrevalenceEstimate.build(Method.RG, 0.1, 1e-4, ci=(0.08, 0.12))
        assert est.covers(0.1) and not est.covers(0.2)
        assert PrevalenceEstimate.build(Method.RG, 0.1, -1e-4).covers(0.1) is None
