from __future__ import annotations

import math

import numpy as np
import pytest

from zoh.errors import ImportanceError
from zoh.importance import (
    AlphaMode,
    AlphaPolicy,
    ProbabilityVector,
    SmoothingMode,
    SmoothingParams,
    convex_alpha,
    convex_step_size,
    optimal_alpha,
    sample_coordinate_set,
    sparsification_probabilities,
    sparsify,
    theoretical_smoothing,
    theoretical_step_size,
)


def water_filling(g, n_c):
    """Reference minimizer of Σ g²/p under Σ p = n_c, p ≤ 1: p_i = min(1, |g_i|/τ)."""
    mags = np.abs(g)
    if n_c >= g.size:
        return np.ones(g.size)
    lo, hi = 0.0, float(mags.sum())
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        if np.minimum(1.0, mags / tau).sum() > n_c:
            lo = tau
        else:
            hi = tau
    return np.minimum(1.0, mags / hi)


class TestSparsificationProbabilities:
    def test_equal_magnitudes(self):
        p = sparsification_probabilities([1.0, 1.0, 1.0, 1.0], 2)
        np.testing.assert_allclose(p.p, [0.5] * 4)
        assert p.k_star == 0

    def test_dominant_coordinate_saturates(self):
        p = sparsification_probabilities([10.0, 1.0, 1.0], 2)
        np.testing.assert_allclose(p.p, [1.0, 0.5, 0.5])
        assert p.k_star == 1

    def test_full_budget(self):
        p = sparsification_probabilities([3.0, -0.1, 0.0, 2.0], 4)
        np.testing.assert_array_equal(p.p, np.ones(4))

    def test_all_zero_falls_back_to_uniform(self):
        p = sparsification_probabilities(np.zeros(5), 2)
        np.testing.assert_allclose(p.p, [0.4] * 5)
        assert p.uniform_fallback

    def test_floor_applies_to_zero_entries(self):
        p = sparsification_probabilities([1.0, 0.0, 0.0], 1)
        assert p.p[1] == pytest.approx(1e-6)
        assert p.p[0] == 1.0

    @pytest.mark.parametrize(
        "g, n_c, expected",
        [
            ([1.0, 0.0, 0.0], 2, [1.0, 0.5, 0.5]),
            ([3.0, 1.0, 0.0, 0.0], 3, [1.0, 1.0, 0.5, 0.5]),
            ([2.0, 0.0, 0.0], 3, [1.0, 1.0, 1.0]),
        ],
    )
    def test_spare_budget_spreads_over_zero_entries(self, g, n_c, expected):
        """Budget beyond the nonzero support goes evenly to the zero entries."""
        p = sparsification_probabilities(g, n_c)
        np.testing.assert_allclose(p.p, expected)
        assert p.p.sum() == pytest.approx(n_c, abs=1e-9)
        assert not p.uniform_fallback

    @pytest.mark.parametrize("n_c", [0, 4])
    def test_budget_out_of_range(self, n_c):
        with pytest.raises(ImportanceError):
            sparsification_probabilities([1.0, 2.0, 3.0], n_c)

    def test_matches_water_filling(self):
        """Closed form equals the KKT solution for every d ≤ 6 and budget."""
        rng = np.random.default_rng(42)
        for d in range(1, 7):
            for _ in range(200):
                g = rng.standard_normal(d)
                for n_c in range(1, d + 1):
                    p = sparsification_probabilities(g, n_c)
                    ref = water_filling(g, n_c)
                    assert p.p.sum() == pytest.approx(n_c, abs=1e-9)
                    ours, best = np.sum(g ** 2 / p.p), np.sum(g ** 2 / ref)
                    assert ours == pytest.approx(best, rel=1e-6)

    def test_larger_magnitude_never_gets_less(self, rng):
        for _ in range(100):
            g = rng.standard_normal(8)
            p = sparsification_probabilities(g, 3).p
            order = np.argsort(-np.abs(g))
            assert np.all(np.diff(p[order]) <= 1e-15)

    def test_saturation_index_is_the_first_feasible(self, rng):
        for _ in range(100):
            g = rng.standard_normal(7) * rng.uniform(0.1, 10, 7)
            n_c = int(rng.integers(1, 8))
            k = sparsification_probabilities(g, n_c).k_star
            s = np.sort(np.abs(g))[::-1]
            tail = np.cumsum(s[::-1])[::-1]
            assert s[k] * (n_c - k) <= tail[k]
            for j in range(k):
                assert s[j] * (n_c - j) > tail[j]

    def test_ties_rank_lower_index_first(self):
        p = sparsification_probabilities([5.0, 5.0, 1.0], 1)
        assert p.k_star == 0
        assert p.p[0] == p.p[1]


class TestProbabilityVector:
    def test_summaries(self):
        p = ProbabilityVector(np.array([1.0, 0.5, 0.25]), budget_nc=2)
        assert p.p_bar == pytest.approx((1 + 2 + 4) / 3)
        assert p.c_min == 0.25
        assert p.expected_size == 1.75

    @pytest.mark.parametrize("values", [[0.0, 1.0], [1.2, 0.5], []])
    def test_rejects_invalid(self, values):
        with pytest.raises(ImportanceError):
            ProbabilityVector(np.asarray(values, dtype=float), budget_nc=1)

    def test_uniform(self):
        p = ProbabilityVector.uniform(8, 2)
        np.testing.assert_array_equal(p.p, np.full(8, 0.25))
        with pytest.raises(ImportanceError):
            ProbabilityVector.uniform(4, 5)


class TestCoordinateSampling:
    def test_certain_inclusion(self, rng):
        p = ProbabilityVector(np.ones(5), budget_nc=5)
        for _ in range(20):
            np.testing.assert_array_equal(sample_coordinate_set(p, rng), np.arange(5))

    def test_floor_inclusion_rate(self, rng):
        p = ProbabilityVector(np.full(3, 1e-6), budget_nc=1)
        n = 100_000
        counts = np.zeros(3)
        for _ in range(n):
            counts[sample_coordinate_set(p, rng)] += 1
        assert np.all(counts / n <= 1e-6 + 3 * np.sqrt(1e-6 / n) + 1.0 / n)

    def test_expected_size(self, rng):
        p = ProbabilityVector(np.array([1.0, 0.5, 0.5]), budget_nc=2)
        sizes = [sample_coordinate_set(p, rng).size for _ in range(100_000)]
        assert np.mean(sizes) == pytest.approx(2.0, abs=0.02)


class TestSparsify:
    def test_identity_with_full_probabilities(self, rng):
        g = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(sparsify(g, ProbabilityVector(np.ones(3), 3), rng), g)

    def test_zero_stays_zero(self, rng):
        np.testing.assert_array_equal(sparsify(np.zeros(4), ProbabilityVector.uniform(4, 1), rng), np.zeros(4))

    def test_moments(self, rng):
        """E[Q(g)] = g and E‖Q(g)‖² = Σ g²/p."""
        g = np.array([10.0, 1.0, 1.0])
        p = ProbabilityVector(np.array([1.0, 0.5, 0.5]), budget_nc=2)
        draws = np.array([sparsify(g, p, rng) for _ in range(100_000)])
        n = draws.shape[0]
        mean_se = draws.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - g) <= 3 * mean_se + 1e-12)
        sq = np.sum(draws ** 2, axis=1)
        assert abs(sq.mean() - 104.0) <= 3 * sq.std(ddof=1) / np.sqrt(n)


class TestOptimalAlpha:
    @pytest.mark.parametrize("d, n_c, n_r", [(8, 2, 4), (10, 10, 10), (16, 1, 32)])
    def test_uniform_probabilities(self, d, n_c, n_r):
        p = ProbabilityVector.uniform(d, n_c)
        expected = 1.0 / (1.0 + n_c / d + n_c / n_r)
        assert optimal_alpha(n_r, p, d) == pytest.approx(expected, rel=1e-12)

    def test_full_budget_equal_directions(self):
        p = ProbabilityVector(np.ones(6), budget_nc=6)
        assert optimal_alpha(6, p, 6) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_many_directions_tends_to_half(self):
        p = ProbabilityVector(np.ones(4), budget_nc=4)
        assert abs(optimal_alpha(10 ** 12, p, 4) - 0.5) < 1e-10

    def test_no_random_directions(self):
        assert optimal_alpha(0, ProbabilityVector.uniform(4, 2), 4) == 0.0

    def test_increases_with_inverse_probability_mean(self):
        values = [optimal_alpha(4, ProbabilityVector.uniform(8, n_c), 8) for n_c in (8, 4, 2, 1)]
        assert values == sorted(values)

    def test_zero_probability(self):
        with pytest.raises(ImportanceError):
            optimal_alpha(4, np.array([0.0, 1.0]), 2)

    def test_minimizes_variance_surrogate(self):
        """α* is the grid point minimizing α²(1+d/n_r) + (1−α)²P̄."""
        grid = np.linspace(0.0, 1.0, 101)
        for d, n_c, n_r in [(8, 2, 4), (20, 5, 1), (4, 4, 100)]:
            p = ProbabilityVector.uniform(d, n_c)
            curve = grid ** 2 * (1 + d / n_r) + (1 - grid) ** 2 * p.p_bar
            assert abs(grid[np.argmin(curve)] - optimal_alpha(n_r, p, d)) <= 0.005 + 1e-12


class TestStepAndSmoothing:
    def test_step_examples(self):
        assert theoretical_step_size(1.0, 1.0, 1.0) == pytest.approx(1.0 / 24.0)
        assert theoretical_step_size(1.0, 0.1, 20.0) == pytest.approx(1.0 / 480.0)

    def test_step_halves_when_l_doubles(self):
        assert theoretical_step_size(4.0, 0.3, 3.0) == pytest.approx(theoretical_step_size(2.0, 0.3, 3.0) / 2)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.5)])
    def test_step_rejects(self, args):
        with pytest.raises(ImportanceError):
            theoretical_step_size(*args)

    def test_nonconvex_radii_relation(self):
        mu_c, mu_r = theoretical_smoothing(SmoothingMode.NONCONVEX, SmoothingParams(d=16, T=100, n_r=4, L=1.0, sigma=0.0))
        assert mu_c == pytest.approx(mu_r * math.sqrt(16) / 2)

    def test_strongly_convex_radii_relation(self):
        mu_c, mu_r = theoretical_smoothing(
            "strongly_convex", SmoothingParams(d=4, T=100, n_r=2, L=1.0, sigma_bar=1.0)
        )
        assert mu_r == pytest.approx(2 * mu_c)

    def test_radii_shrink_with_horizon(self):
        params = dict(d=9, n_r=3, L=2.0, sigma=0.0)
        short = theoretical_smoothing("nonconvex", SmoothingParams(T=100, **params))
        long = theoretical_smoothing("nonconvex", SmoothingParams(T=400, **params))
        assert short[0] / long[0] == pytest.approx(math.sqrt(2.0))
        assert short[1] / long[1] == pytest.approx(math.sqrt(2.0))

    def test_noise_caps_nonconvex_radius(self):
        mu_c, _ = theoretical_smoothing("nonconvex", SmoothingParams(d=4, T=1, n_r=4, L=1.0, sigma=1e-4))
        assert mu_c == pytest.approx(1e-4 / 2)

    def test_missing_constants(self):
        with pytest.raises(ImportanceError):
            theoretical_smoothing("nonconvex", SmoothingParams(d=4, T=10, n_r=1))
        with pytest.raises(ImportanceError):
            theoretical_smoothing("strongly_convex", SmoothingParams(d=4, T=10, n_r=1, L=1.0))

    def test_convex_helpers(self):
        assert convex_alpha(0.5, 3.0) == pytest.approx(1.0 / 2.5)
        eta = convex_step_size(R=2.0, T=3, alpha=0.0, G=1.0, sigma_sq=1.0, d_nr=2.0, c_bar=0.5)
        assert eta == pytest.approx(2.0 / math.sqrt(12 * 3 * 4.0))


class TestAlphaPolicy:
    def test_linear_ramp(self):
        policy = AlphaPolicy(AlphaMode.LINEAR_RAMP)
        assert [policy.resolve(t, 4, None, 2, 4) for t in (1, 2, 4)] == [0.25, 0.5, 1.0]

    def test_constant(self):
        assert AlphaPolicy.constant(0.3).resolve(5, 10, ProbabilityVector.uniform(4, 2), 2, 4) == 0.3

    def test_optimal_uses_probabilities(self):
        p = ProbabilityVector.uniform(8, 2)
        assert AlphaPolicy().resolve(1, 10, p, 4, 8) == optimal_alpha(4, p, 8)

    def test_convex(self):
        p = ProbabilityVector.uniform(4, 2)
        assert AlphaPolicy(AlphaMode.CONVEX).resolve(1, 10, p, 4, 4) == pytest.approx(convex_alpha(0.5, 2.0))

    def test_invalid_constant(self):
        with pytest.raises(ImportanceError):
            AlphaPolicy.constant(1.5)
