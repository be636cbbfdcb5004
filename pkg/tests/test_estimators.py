import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import minimize

from seroprev import glm
from seroprev.estimators import (
    estimate_assay,
    naive_prevalence,
    restrict,
    rogan_gladen,
    srg,
    srgm,
)
from seroprev.model import (
    RESTRICTED,
    TRUNCATED_POINT,
    WORSE_THAN_GUESSING,
    DegenerateAssayError,
    MainStudy,
    RegressionSpec,
    StratumTable,
    ValidationStudy,
)
from seroprev.simulation import DGP, Scenario, generate, model_spec, replicate_rng

probs = st.floats(0.0, 1.0)
assay = st.floats(0.51, 1.0)


def test_estimate_assay():
    assert estimate_assay(ValidationStudy(40, 40, 277, 274)) == (1.0, 274 / 277)
    se, sp = estimate_assay(ValidationStudy(181, 154, 326, 322))
    assert (round(se, 3), round(sp, 3)) == (0.851, 0.988)
    assert estimate_assay(ValidationStudy(10, 0, 10, 10)) == (0.0, 1.0)


class TestNaive:
    def test_screening_proportion(self):
        est = naive_prevalence(MainStudy.unstratified(24, 2973))
        assert est.point == pytest.approx(0.00807265, abs=1e-8)
        assert round(100 * est.point, 2) == 0.81

    @pytest.mark.parametrize("k,point", [(0, 0.0), (100, 1.0)])
    def test_boundaries(self, k, point):
        est = naive_prevalence(MainStudy.unstratified(k, 100))
        assert est.point == point
        assert 0.0 <= est.ci_low <= est.ci_high <= 1.0


class TestRoganGladen:
    def test_inverts_two_percent_example(self):
        assert rogan_gladen(0.0199, 1.0, 0.99).point == pytest.approx(0.01, abs=1e-12)

    def test_perfect_assay_is_identity(self):
        assert rogan_gladen(0.137, 1.0, 1.0).point == 0.137

    def test_screening_truncates(self):
        est = rogan_gladen(24 / 2973, 1.0, 274 / 277)
        assert est.point_raw == pytest.approx(-0.0027878645, abs=1e-10)
        assert est.point == 0.0
        assert TRUNCATED_POINT in est.flags

    def test_degenerate(self):
        with pytest.raises(DegenerateAssayError):
            rogan_gladen(0.3, 0.5, 0.5)

    def test_worse_than_guessing_flagged(self):
        est = rogan_gladen(0.3, 0.3, 0.4)
        assert WORSE_THAN_GUESSING in est.flags
        assert est.point_raw == pytest.approx((0.3 + 0.4 - 1) / (0.3 + 0.4 - 1))

    @given(probs, assay, assay)
    def test_identity_inversion(self, pi, se, sp):
        rho = pi * se + (1 - pi) * (1 - sp)
        assert rogan_gladen(rho, se, sp).point == pytest.approx(pi, abs=1e-12)

    @given(probs, probs, assay, assay)
    def test_strictly_increasing(self, r1, r2, se, sp):
        assume(r2 - r1 > 1e-12)
        assert rogan_gladen(r1, se, sp).point_raw < rogan_gladen(r2, se, sp).point_raw

    @given(probs, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_point_in_unit_interval(self, rho, se, sp):
        assume(abs(se + sp - 1) > 1e-9)
        est = rogan_gladen(rho, se, sp)
        assert 0.0 <= est.point <= 1.0
        assert est.point_raw == pytest.approx((rho + sp - 1) / (se + sp - 1), rel=1e-12)


class TestRestrict:
    def test_identity_when_all_sampled(self, two_strata):
        table, m = two_strata
        t, dropped = restrict(m, table)
        assert t == table and dropped == []

    def test_renormalizes(self):
        t = StratumTable(("z1", "z2", "z3"), [0.5, 0.3, 0.2])
        m = MainStudy.from_records([(1, "z1"), (0, "z2")])
        new, dropped = restrict(m, t)
        assert dropped == ["z3"]
        assert new.labels == ("z1", "z2")
        np.testing.assert_allclose(new.gammas, [0.625, 0.375], rtol=1e-15)

    def test_belgium_shape(self):
        from seroprev import fileio
        from seroprev.cli import bundled
        root = bundled("examples/belgium_synthetic")
        t = fileio.read_strata(root / "strata.csv")
        m = fileio.read_main(root / "main.csv")
        new, dropped = restrict(m, t)
        assert (t.k, new.k, len(dropped)) == (220, 205, 15)
        assert math.fsum(new.gammas) == pytest.approx(1.0, abs=1e-12)


class TestSRG:
    def test_single_stratum_matches_pooled(self):
        m = MainStudy.from_records([(1, "all")] * 30 + [(0, "all")] * 270)
        t = StratumTable(("all",), [1.0])
        assert srg(m, t, 0.9, 0.95).point_raw == rogan_gladen(0.1, 0.9, 0.95).point_raw

    def test_arithmetic_mean(self, two_strata):
        table, m = two_strata
        assert srg(m, table, 1.0, 1.0).point == pytest.approx(0.02, abs=1e-15)

    @given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=8), assay, assay,
           st.integers(0, 20))
    def test_equal_means_reduce_to_rg(self, w, se, sp, k):
        labels = [f"z{i}" for i in range(len(w))]
        t = StratumTable.normalized(labels, w)
        m = MainStudy.from_records([(int(i < k), z) for z in labels for i in range(20)])
        assert srg(m, t, se, sp).point_raw == pytest.approx(
            rogan_gladen(k / 20, se, sp).point_raw, rel=1e-12, abs=1e-14)

    def test_restricted_flag(self):
        t = StratumTable(("z1", "z2", "z3"), [0.5, 0.3, 0.2])
        m = MainStudy.from_records([(1, "z1"), (0, "z1"), (0, "z2")])
        est = srg(m, t, 1.0, 1.0)
        assert RESTRICTED in est.flags and est.dropped_strata == ("z3",)
        assert est.point == pytest.approx(0.625 * 0.5)

    def test_dgp2_hand_computation(self):
        sc = Scenario(DGP.DGP2, 0.10, 0.99, 0.95)
        data = generate(sc, replicate_rng(7, sc.id, 0))
        # independent recomputation from raw records
        tallies = {}
        for x, z in data.main.records():
            n, k = tallies.get(z, (0, 0))
            tallies[z] = (n + 1, k + x)
        gam = dict(zip(data.table.labels, data.table.gammas.tolist()))
        rho = sum(gam[z] * k / n for z, (n, k) in tallies.items())
        v = data.validation
        se, sp = v.x_sens_pos / v.n_sens, v.x_spec_neg / v.n_spec
        expected = (rho + sp - 1) / (se + sp - 1)
        assert srg(data.main, data.table, se, sp).point_raw == pytest.approx(expected, rel=1e-12)


class TestSRGM:
    def test_intercept_only_matches_pooled_rg(self, two_strata):
        table, m = two_strata
        est = srgm(m, table, RegressionSpec.intercept_only(), 0.9, 0.97)
        rg = rogan_gladen(m.positives / m.n, 0.9, 0.97)
        assert est.point_raw == pytest.approx(rg.point_raw, rel=1e-10)

    def test_saturated_matches_srg(self):
        sc = Scenario(DGP.DGP2, 0.10, 0.99, 0.95)
        data = generate(sc, replicate_rng(3, sc.id, 0))
        spec = RegressionSpec.saturated(data.table.labels)
        a = srgm(data.main, data.table, spec, 0.99, 0.95).point_raw
        b = srg(data.main, data.table, 0.99, 0.95).point_raw
        assert a == pytest.approx(b, abs=1e-8)

    def test_keeps_unsampled_strata(self):
        t = StratumTable(("a|x", "a|y", "b|x", "b|y"), [0.25] * 4)
        H = np.array([[1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]], dtype=float)
        spec = RegressionSpec.from_matrix(t.labels, H)
        recs = ([(1, "a|x")] * 5 + [(0, "a|x")] * 45 + [(1, "a|y")] * 10 + [(0, "a|y")] * 40
                + [(1, "b|x")] * 15 + [(0, "b|x")] * 35)
        m = MainStudy.from_records(recs)
        est = srgm(m, t, spec, 1.0, 1.0)
        assert est.details["unsampled_strata"] == 1
        assert not est.dropped_strata
        # additive logit model: the unsampled cell is extrapolated, not dropped
        fit = glm.fit(m, t, spec)
        mu = fit.predict(H)
        assert est.point == pytest.approx(mu.mean(), rel=1e-12)

    def test_dgp4_against_independent_fit(self):
        sc = Scenario(DGP.DGP4, 0.10, 0.99, 0.95)
        data = generate(sc, replicate_rng(11, sc.id, 0))
        spec = model_spec(DGP.DGP4)
        t, m = data.table, data.main
        H = spec.design(t.labels)
        n_j, pos_j = m.tally(t)
        keep = n_j > 0
        Hs, n, y = H[keep], n_j[keep], pos_j[keep]

        def negll(b):
            eta = Hs @ b
            return -float(np.sum(y * eta - n * np.logaddexp(0.0, eta)))

        def grad(b):
            mu = 1.0 / (1.0 + np.exp(-(Hs @ b)))
            return -(Hs.T @ (y - n * mu))

        res = minimize(negll, np.zeros(H.shape[1]), jac=grad, method="BFGS",
                       options={"gtol": 1e-11, "maxiter": 10_000})
        rho = float((1.0 / (1.0 + np.exp(-(H @ res.x)))) @ t.gammas)
        se, sp = estimate_assay(data.validation)
        expected = (rho + sp - 1) / (se + sp - 1)
        assert srgm(m, t, spec, se, sp).point_raw == pytest.approx(expected, rel=1e-6)
