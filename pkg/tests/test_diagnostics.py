import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lsqgap import diagnostics
from lsqgap._rng import derive_seed
from lsqgap.diagnostics import (
    Estimator,
    ExcessRiskEstimate,
    bound_overlay,
    construction_stats,
    diagnose,
    effective_dimension,
    excess_risk_mc,
    moment_equivalence_constants,
    multiplier_term,
    predictor_risk,
    ridge_multiplier_bound_check,
    trace_factor,
)
from lsqgap.distributions import (
    CouponCollector,
    Dataset,
    FiniteDiscrete,
    SparseDenseMixture,
    WellSpecifiedGaussian,
    exact_risk,
    optimal_weights,
)
from lsqgap.estimators import ForsterWarmuthPredictor, fit_min_norm, vaw_batch


class TestEstimatorDescriptor:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("min_norm", Estimator("min_norm")),
            ("ridge(2)", Estimator("ridge", lam=2.0)),
            ("constrained_ls(b=4)", Estimator("constrained_ls", b=4.0)),
            ("vaw_batch(lambda=0.5)", Estimator("vaw_batch", lam=0.5)),
        ],
    )
    def test_parse(self, text, expected):
        assert Estimator.parse(text) == expected

    def test_missing_parameter(self):
        with pytest.raises(ValueError):
            Estimator("ridge")

    def test_unknown(self):
        with pytest.raises(ValueError):
            Estimator.parse("lasso(1)")


class TestAggregation:
    def test_mean_and_stderr(self):
        est = ExcessRiskEstimate.from_values([1.0, 2.0, 3.0, 4.0])
        assert est.mean == 2.5
        assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_compensated_sum(self):
        vals = [1e16, 1.0, -1e16, 1.0]
        assert ExcessRiskEstimate.from_values(vals).mean == 0.5


class TestExcessRisk:
    def test_coupon_default_erm_is_exact_zero(self):
        spec = CouponCollector(6, 6)
        est = excess_risk_mc(spec, "min_norm", 500, 10, 1, b=1.0)
        assert abs(est.mean) <= 1e-12

    def test_workers_do_not_change_results(self):
        spec = SparseDenseMixture(9)
        a = excess_risk_mc(spec, "constrained_ls(b=3)", 800, 6, 5)
        b = excess_risk_mc(spec, "constrained_ls(b=3)", 800, 6, 5, workers=3)
        assert_array_equal(a.per_replicate, b.per_replicate)
        assert a.mean == b.mean

    def test_replicates_share_data_across_estimators(self):
        spec = SparseDenseMixture(4)
        a = excess_risk_mc(spec, "min_norm", 300, 4, 2, b=math.inf)
        c = excess_risk_mc(spec, "constrained_ls(b=100)", 300, 4, 2, b=math.inf)
        assert_allclose(a.per_replicate, c.per_replicate, atol=1e-12)

    def test_forster_warmuth_rate(self):
        est = excess_risk_mc(SparseDenseMixture(16), "forster_warmuth", 10_000, 8, 3, b=4.0)
        assert est.mean <= 10 * 16 / 10_000

    def test_nonnegative_for_proper_estimators(self):
        est = excess_risk_mc(SparseDenseMixture(16), "constrained_ls(b=4)", 2000, 20, 9)
        assert est.mean >= -3 * est.stderr
        assert np.all(est.per_replicate >= -1e-12)


class TestPredictorRisk:
    def test_linear_is_exact(self):
        spec = SparseDenseMixture(16)
        fit = fit_min_norm(spec.draw(3000, 1))
        assert predictor_risk(spec, fit) == exact_risk(spec, fit.weights)

    def test_enumeration_matches_brute_force(self):
        spec = SparseDenseMixture(16)
        fw = ForsterWarmuthPredictor(spec.draw(3000, 2))
        X, y, p = spec.atoms()
        brute = sum(pi * (yi - fw(x)) ** 2 for x, yi, pi in zip(X, y, p))
        assert predictor_risk(spec, fw) == pytest.approx(brute, rel=1e-12)

    @pytest.mark.parametrize("kind", ["fw", "vaw"])
    def test_monte_carlo_agrees_with_enumeration(self, kind, monkeypatch):
        spec = SparseDenseMixture(16)
        draw = spec.draw(3000, 4)
        pred = ForsterWarmuthPredictor(draw) if kind == "fw" else vaw_batch(draw.to_dataset(), 4.0)
        exact = predictor_risk(spec, pred)
        monkeypatch.setattr(diagnostics, "ATOM_LIMIT", 10)
        mc = [predictor_risk(spec, pred, samples=4000, seed=s) for s in range(5)]
        assert np.mean(mc) == pytest.approx(exact, abs=5 * np.std(mc) / math.sqrt(5) + 1e-6)

    def test_gaussian_monte_carlo_close_to_linear_anchor(self):
        spec = WellSpecifiedGaussian(3)
        pred = vaw_batch(spec.draw(400, 1), 1.0)
        risk = predictor_risk(spec, pred, samples=20000, seed=3)
        assert 1.0 <= risk <= 1.0 + 0.05


class TestMultiplier:
    def test_zero_noise(self):
        est = multiplier_term(CouponCollector(10, 10), 200, 1.0, 5, 1)
        assert est.mean == 0 and est.stderr == 0

    def test_gaussian_factorisation(self):
        spec = WellSpecifiedGaussian(5)
        m = multiplier_term(spec, 200, 1.0, 200, 4)
        t = trace_factor(spec, 200, 1.0, 200, 4)
        r_star = optimal_weights(spec)[1]
        assert abs(m.mean - r_star * t.mean) <= 3 * math.hypot(m.stderr, r_star * t.stderr)

    def test_compact_path_matches_brute_force(self):
        spec = SparseDenseMixture(16)
        n, lam = 8192, 1.0
        draw = spec.draw(n, derive_seed(7, 0))
        ds = draw.to_dataset()
        w = optimal_weights(spec)[0]
        X = ds.covariates
        M = np.linalg.inv(lam * np.eye(16) + X.T @ X)
        brute = np.sum((ds.responses - X @ w) ** 2 * np.einsum("ij,jk,ik->i", X, M, X))
        est = multiplier_term(spec, n, lam, 1, 7)
        assert est.mean == pytest.approx(brute, rel=1e-10)

    def test_single_index_agrees_with_average(self):
        spec = SparseDenseMixture(16)
        avg = multiplier_term(spec, 2000, 1.0, 400, 2)
        one = multiplier_term(spec, 2000, 1.0, 400, 2, index=1999)
        assert abs(avg.mean - one.mean) <= 3 * math.hypot(avg.stderr, one.stderr)


class TestEffectiveDimension:
    def test_identity_half(self):
        assert effective_dimension(np.eye(7), 50.0, 50) == pytest.approx(3.5)

    def test_no_regularisation(self):
        assert effective_dimension(np.diag([1.0, 2.0, 3.0]), 0.0, 10) == 3

    def test_ill_conditioned(self):
        eps, t = 1e-6, 1e-3
        expected = 1 / (1 + t) + eps / (eps + t)
        assert effective_dimension(np.diag([1.0, eps]), t * 100, 100) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8))
    def test_monotone_in_lambda(self, seed, d):
        B = np.random.default_rng(seed).standard_normal((d, d))
        S = B @ B.T
        vals = [effective_dimension(S, lam, 10) for lam in np.logspace(-3, 3, 10)]
        assert np.all(np.diff(vals) <= 1e-12)
        assert 0 < vals[0] <= d


class TestMomentEquivalence:
    def test_gaussian_noise(self):
        r = moment_equivalence_constants(WellSpecifiedGaussian(4), 100_000, 1)
        assert r.noise_ratio == pytest.approx(3**0.25, abs=0.05)
        assert 1 - 1e-9 <= r.design_ratio <= 2

    def test_constant_noise(self):
        spec = FiniteDiscrete([[1.0], [-1.0]], [0.5, 0.5], [0.5, 0.5])
        r = moment_equivalence_constants(spec, 1000, 1)
        assert r.noise_ratio == pytest.approx(1.0, abs=1e-12)

    def test_bernoulli_marginal(self):
        p = 16**-0.5
        spec = FiniteDiscrete([[0.0], [1.0]], [0.0, 0.0], [1 - p, p])
        r = moment_equivalence_constants(spec, 100_000, 2)
        assert r.design_ratio**2 == pytest.approx(1 / p, rel=0.05)
        assert math.isnan(r.noise_ratio)

    def test_sparse_dense_ratio_grows(self):
        small = moment_equivalence_constants(SparseDenseMixture(16), 50_000, 3)
        large = moment_equivalence_constants(SparseDenseMixture(64), 50_000, 3)
        assert large.design_ratio > small.design_ratio >= 1


class TestConstructionStats:
    def test_no_sparse_rows(self):
        ds = Dataset(np.full((10, 4), 0.25), np.ones(10), 1.0, 1.0)
        cs = construction_stats(ds)
        assert cs.sparse_count == 0 and not cs.a_invertible
        assert_array_equal(cs.A, 0)

    def test_sparse_count(self):
        d, n = 16, 1600
        cs = construction_stats(SparseDenseMixture(d).draw(n, 4))
        assert abs(cs.sparse_count - 400) <= 5 * math.sqrt(n * d**-0.5)

    @pytest.mark.parametrize("seed", range(5))
    def test_identities(self, seed):
        d = 16
        draw = SparseDenseMixture(d).draw(3000, seed)
        for cs in (construction_stats(draw), construction_stats(draw.to_dataset())):
            assert_allclose(cs.A @ np.ones(d), cs.counts, atol=1e-10)
            assert abs(cs.zeta.sum()) <= 1e-10
            assert_allclose(cs.counts, cs.sparse_count * d**-0.5 + cs.zeta, atol=1e-12)

    def test_compact_and_dense_agree(self):
        draw = SparseDenseMixture(9).draw(2000, 1)
        a, b = construction_stats(draw), construction_stats(draw.to_dataset())
        assert a.sparse_count == b.sparse_count
        assert_allclose(a.A, b.A, atol=1e-12)
        assert a.q_form_zAz == pytest.approx(b.q_form_zAz, rel=1e-9)

    @pytest.mark.slow
    @pytest.mark.parametrize("d", [16, 25, 36])
    def test_count_noise_scales_with_n(self, d):
        n = math.ceil(d**3 * math.log(d))
        spec = SparseDenseMixture(d)
        vals = []
        for i in range(100):
            cs = construction_stats(spec.draw(n, derive_seed(11, i)))
            vals.append(cs.zeta @ cs.zeta / n)
        assert 0.2 <= np.median(vals) <= 5


class TestBounds:
    def test_examples(self):
        out = bound_overlay(16, 1600, 1.0, 1.0, 4.0)
        assert out["shamir_fast"] == pytest.approx(0.02)
        assert out["localized_upper"] == pytest.approx(0.17)
        assert out["d32_curve"] == pytest.approx(64 / 1600)

    def test_zero_radius(self):
        assert bound_overlay(16, 1600, 1.0, 1.0, 0.0)["shamir_fast"] == pytest.approx(0.01)

    @settings(max_examples=100)
    @given(
        st.integers(1, 10**4),
        st.integers(1, 10**8),
        st.floats(1e-3, 1e3),
        st.floats(1e-3, 1e3),
        st.floats(1e-3, 1e3),
    )
    def test_ordering(self, d, n, m, r, b):
        out = bound_overlay(d, n, m, r, b)
        assert out["shamir_fast"] <= out["localized_upper"] * (1 + 1e-15)
        assert out["slow_rate"] <= m**2 * (1 + 1e-15)


class TestRidgeBoundCheck:
    def test_gaussian(self):
        rep = ridge_multiplier_bound_check(WellSpecifiedGaussian(5), 200, 1.0, 1.0, 50, 1)
        assert math.isfinite(rep.c_hat) and rep.c_hat < 100

    def test_noiseless(self):
        n, lam, b = 300, 1.0, 1.0
        rep = ridge_multiplier_bound_check(CouponCollector(20, 20), n, lam, b, 10, 1)
        assert rep.observed.mean <= 100 * lam * b**2 / n

    def test_infinite_penalty(self):
        spec = SparseDenseMixture(16)
        rep = ridge_multiplier_bound_check(spec, 500, 1e12, 4.0, 4, 2)
        gap = exact_risk(spec, np.zeros(16)) - optimal_weights(spec, 4.0)[1]
        assert rep.observed.mean == pytest.approx(gap, rel=1e-9)


def test_diagnose_report_invariants():
    rep = diagnose(SparseDenseMixture(16), 4000, 1.0, 4.0, 4, 1, moment_samples=20000)
    assert 0 < rep.effective_dimension <= 16
    assert 0 <= rep.leverage_max <= 1
    assert rep.noise_l4_l2 >= 1 - 1e-9 and rep.design_l4_l2 >= 1 - 1e-9
    assert rep.bound_overlay["shamir_fast"] <= rep.bound_overlay["localized_upper"]
    assert rep.multiplier_term > 0
