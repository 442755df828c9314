from __future__ import annotations

import numpy as np
import pytest

from zoh.diagnostics import (
    BoundInputs,
    EstimatorSpec,
    alpha_sweep,
    check_bounds,
    coarse_sqnorm_bounds,
    cge_variance_bound,
    empirical_moments,
    hge_variance_bound,
    inner_product_bounds,
    lipschitz_certificate,
    rge_variance_bound,
    sqnorm_bounds,
)
from zoh.errors import DiagnosticsError
from zoh.estimators import CgeConfig, EstimatorKind, RgeConfig
from zoh.importance import ProbabilityVector, optimal_alpha, sparsification_probabilities
from zoh.objectives import load_logistic, make_function, make_quadratic

from .conftest import DATA


def inputs(**overrides):
    base = dict(
        L=1.0,
        zeta=0.5,
        d=4,
        n_r=4,
        batch_r=1,
        batch_c=1,
        mu_r=0.1,
        mu_c=[0.1] * 4,
        p=[1.0] * 4,
        grad_at_x=[1.0, 0.0, 0.0, 0.0],
    )
    base.update(overrides)
    return BoundInputs(**base)


class TestClosedFormBounds:
    def test_rge_variance_example(self):
        assert rge_variance_bound(inputs()) == pytest.approx(8.14, rel=1e-12)

    def test_rge_variance_large_batch(self):
        """Huge batches leave only the smoothing term μ²L²d²/4."""
        assert rge_variance_bound(inputs(batch_r=10 ** 9)) == pytest.approx(0.04, abs=1e-7)

    def test_rge_variance_vanishes(self):
        inp = inputs(zeta=0.0, mu_r=1e-12, grad_at_x=[0.0] * 4)
        assert rge_variance_bound(inp) < 1e-20

    def test_cge_variance_example(self):
        inp = inputs(d=2, zeta=1.0, mu_c=[0.1, 0.1], p=[1.0, 0.5], grad_at_x=[1.0, 0.0])
        assert cge_variance_bound(inp) == pytest.approx(9.06, rel=1e-12)

    def test_cge_variance_full_probabilities(self):
        inp = inputs(batch_c=10 ** 9, grad_at_x=[1.0, -2.0, 0.5, 3.0])
        assert cge_variance_bound(inp) == pytest.approx(4 * 0.01 / 2, abs=1e-7)

    def test_hge_combination(self):
        inp = inputs(p=[0.5] * 4)
        r, c = rge_variance_bound(inp), cge_variance_bound(inp)
        assert hge_variance_bound(inp, 1.0) == pytest.approx(2 * r)
        assert hge_variance_bound(inp, 0.0) == pytest.approx(2 * c)
        assert hge_variance_bound(inp, 0.5) == pytest.approx(0.5 * (r + c))
        with pytest.raises(DiagnosticsError):
            hge_variance_bound(inp, 1.1)

    def test_sqnorm_bounds_vanish(self):
        inp = inputs(zeta=0.0, mu_r=0.0, mu_c=[1e-300] * 4, grad_at_x=[0.0] * 4)
        rge_sq, cge_sq = sqnorm_bounds(inp)
        assert rge_sq == 0.0
        assert cge_sq == pytest.approx(0.0, abs=1e-300)

    def test_sqnorm_large_batch(self):
        rge_sq, _ = sqnorm_bounds(inputs(batch_r=10 ** 12))
        assert rge_sq == pytest.approx(2.0 + 0.16 / 2, abs=1e-9)

    def test_sqnorm_scales_with_inverse_probability(self):
        _, full = sqnorm_bounds(inputs())
        _, half = sqnorm_bounds(inputs(p=[0.5] * 4))
        assert half == pytest.approx(2 * full, rel=1e-12)

    def test_inner_products_at_stationary_point(self):
        r, c = inner_product_bounds(inputs(grad_at_x=[0.0] * 4))
        assert r == pytest.approx(0.04)
        assert c == pytest.approx(0.04)

    def test_inner_products_without_smoothing(self):
        r, c = inner_product_bounds(inputs(mu_r=0.0, mu_c=[1e-300] * 4, grad_at_x=[2.0, 0.0, 0.0, 0.0]))
        assert r == pytest.approx(-3.0)
        assert c == pytest.approx(-3.0)

    def test_coarse_bounds(self):
        rge_sq, cge_sq = coarse_sqnorm_bounds(inputs(p=[0.5, 1.0, 1.0, 1.0]), G=1.0)
        assert rge_sq == pytest.approx(24.0)
        assert cge_sq == pytest.approx(24.0)

    def test_shape_mismatch(self):
        with pytest.raises(DiagnosticsError):
            inputs(p=[1.0, 1.0])

    def test_unknown_metadata_is_refused(self, toy_attack):
        with pytest.raises(DiagnosticsError):
            BoundInputs.from_objective(
                toy_attack,
                np.zeros(8),
                RgeConfig(2, 0.01),
                CgeConfig.uniform(8, 0.01),
                ProbabilityVector.uniform(8, 2),
            )


class TestEmpiricalMoments:
    def test_constant_objective(self, constant4):
        spec = EstimatorSpec(EstimatorKind.RGE, rge=RgeConfig(3, 0.1))
        m = empirical_moments(constant4, np.ones(4), spec, 200, np.random.default_rng(0))
        assert m.variance == 0.0
        assert m.sqnorm == 0.0
        np.testing.assert_array_equal(m.mean, np.zeros(4))

    def test_rge_mean_on_linear_function(self):
        c = np.array([1.0, -1.0, 2.0])
        obj = make_function(lambda x: float(c @ x), 3, gradient=lambda x: c)
        spec = EstimatorSpec(EstimatorKind.RGE, rge=RgeConfig(2, 0.1))
        m = empirical_moments(obj, np.zeros(3), spec, 20_000, np.random.default_rng(2))
        assert np.all(np.abs(m.mean - c) <= 3 * m.mean_se)

    def test_standard_error_shrinks(self, quad4_noisy):
        spec = EstimatorSpec(EstimatorKind.RGE, rge=RgeConfig(2, 0.01))
        small = empirical_moments(quad4_noisy, np.ones(4), spec, 2000, np.random.default_rng(3))
        large = empirical_moments(quad4_noisy, np.ones(4), spec, 8000, np.random.default_rng(3))
        assert 1.6 <= small.variance_se / large.variance_se <= 2.5
        assert large.trials == 8000

    def test_independent_of_job_count(self, quad4_noisy):
        p = ProbabilityVector.uniform(4, 2)
        spec = EstimatorSpec(EstimatorKind.HGE, rge=RgeConfig(2, 0.01), cge=CgeConfig.uniform(4, 0.01), p=p, alpha=0.4)
        serial = empirical_moments(quad4_noisy, np.ones(4), spec, 2500, np.random.default_rng(4), jobs=1)
        pooled = empirical_moments(quad4_noisy, np.ones(4), spec, 2500, np.random.default_rng(4), jobs=3)
        np.testing.assert_array_equal(serial.mean, pooled.mean)
        assert serial.variance == pooled.variance
        assert serial.sqnorm == pooled.sqnorm
        assert serial.inner == pooled.inner

    def test_errors(self, quad2):
        spec = EstimatorSpec(EstimatorKind.RGE, rge=RgeConfig(2, 0.01))
        with pytest.raises(DiagnosticsError):
            empirical_moments(quad2, np.ones(2), spec, 0, np.random.default_rng(0))
        blind = make_function(lambda x: float(x @ x), 2)
        with pytest.raises(DiagnosticsError):
            empirical_moments(blind, np.ones(2), spec, 10, np.random.default_rng(0))
        with pytest.raises(DiagnosticsError):
            EstimatorSpec(EstimatorKind.CGE_SAMPLED, cge=CgeConfig.uniform(2, 0.1))


class TestHybridVariance:
    def test_hybrid_beats_random_directions(self):
        """With importance-sampled coordinates and α*, HGE has lower variance than RGE."""
        obj = make_quadratic(8, [1.0] * 8)
        x = np.array([1.0] * 4 + [0.1] * 4)
        p = sparsification_probabilities(obj.exact.gradient(x), 4)
        alpha = optimal_alpha(4, p, 8)
        assert alpha == pytest.approx(0.668, abs=1e-3)
        rge_cfg, cge_cfg = RgeConfig(4, 1e-4), CgeConfig.uniform(8, 1e-4)
        rng = np.random.default_rng(6)
        m_rge = empirical_moments(obj, x, EstimatorSpec(EstimatorKind.RGE, rge=rge_cfg), 4000, rng)
        m_hge = empirical_moments(
            obj, x, EstimatorSpec(EstimatorKind.HGE, rge=rge_cfg, cge=cge_cfg, p=p, alpha=alpha), 4000, rng
        )
        assert m_hge.variance < m_rge.variance

    def test_alpha_sweep_minimum_near_optimal(self):
        obj = make_quadratic(8, [1.0] * 8)
        p = ProbabilityVector.uniform(8, 4)
        alphas = np.linspace(0.0, 1.0, 11)
        curve = alpha_sweep(obj, np.full(8, 0.5), RgeConfig(8, 1e-4), CgeConfig.uniform(8, 1e-4), p, alphas, 4000, np.random.default_rng(9))
        best = min(curve, key=lambda item: item[1])[0]
        assert abs(best - optimal_alpha(8, p, 8)) <= 0.2


class TestCheckBounds:
    @pytest.mark.parametrize(
        "obj, x",
        [
            (make_quadratic(4, [1.0, 2.0, 3.0, 4.0]), np.linspace(0.5, 1.5, 4)),
            (make_quadratic(4, [1.0, 2.0, 3.0, 4.0], noise_zeta=0.1, seed=2), np.linspace(0.5, 1.5, 4)),
            (load_logistic(DATA / "logistic_demo.csv", 0.1), np.full(5, 0.3)),
        ],
        ids=["quadratic", "noisy-quadratic", "logistic"],
    )
    @pytest.mark.parametrize("n_r, n_c, mu", [(2, 1, 0.01), (4, 2, 0.1)])
    def test_bounds_hold(self, obj, x, n_r, n_c, mu):
        d = obj.dimension
        p = sparsification_probabilities(obj.exact.gradient(x), n_c)
        report = check_bounds(
            obj,
            x,
            RgeConfig(n_r, mu),
            CgeConfig.uniform(d, mu),
            p,
            optimal_alpha(n_r, p, d),
            1000,
            np.random.default_rng(5),
        )
        assert report.passed, report.failures
        assert {c.name for c in report.checks} == {
            "rge_variance",
            "cge_variance",
            "hge_variance",
            "rge_sqnorm",
            "cge_sqnorm",
            "rge_inner",
            "cge_inner",
            "lipschitz",
        }

    def test_halved_lipschitz_constant_is_caught(self):
        obj = make_quadratic(4, [1.0] * 4, noise_zeta=0.1, seed=3)
        x = np.linspace(0.5, 1.5, 4)
        p = sparsification_probabilities(obj.exact.gradient(x), 2)
        report = check_bounds(
            obj, x, RgeConfig(4, 0.01), CgeConfig.uniform(4, 0.01), p, 0.5, 500, np.random.default_rng(1), lipschitz_scale=0.5
        )
        assert not report.passed
        assert "lipschitz" in report.failures
        assert report.check("lipschitz").empirical == pytest.approx(2.0)
        assert report.to_dict()["passed"] is False

    def test_certificate_respects_claimed_constant(self):
        obj = make_quadratic(2, [1.0, 3.0])
        observed = lipschitz_certificate(obj, np.zeros(2), rng=np.random.default_rng(0))
        assert 2.0 <= observed <= 6.0 * (1 + 1e-12)
