"""
Unit tests for block densities, closed-form divergences and special functions.

Tests cover:
- Density construction and validation
- Directed and weighted KL in every family
- Means, total variation and geometric mixtures
- Normal hazard, Lambert W and the inequalities the contraction theory relies on
"""

import math

import numpy as np
import pytest
from scipy.special import expit, logit

from CaviLab.core.divergences import (
    Gamma,
    MVNormal,
    ProductTruncNormal,
    ProductTwoPoint,
    Side,
    TruncNormal,
    TwoPoint,
    UniNormal,
    densities_close,
    density_from_dict,
    expit_difference,
    geometric_mix,
    hazard,
    kl,
    kl_weighted,
    lambert_w0,
    mean,
    trunc_normal_means,
    tv_distance,
)
from CaviLab.core.exceptions import DimensionMismatchError, FamilyMismatchError, ParameterError

pytestmark = pytest.mark.unit

SQRT_2_OVER_PI = 0.7978845608028654


def random_pair(family, rng):
    """Two random densities of one family."""
    if family == "uni_normal":
        return tuple(UniNormal(rng.normal(0, 2), 10.0 ** rng.uniform(-1, 1)) for _ in range(2))
    if family == "mv_normal":
        pair = []
        for _ in range(2):
            factor = rng.standard_normal((3, 3))
            pair.append(MVNormal(rng.normal(0, 2, 3), factor @ factor.T + 0.5 * np.eye(3)))
        return tuple(pair)
    if family == "gamma":
        return tuple(Gamma(10.0 ** rng.uniform(0, 1.3), 10.0 ** rng.uniform(-1, 1)) for _ in range(2))
    if family == "two_point":
        return TwoPoint(rng.uniform(-6, 6)), TwoPoint(rng.uniform(-6, 6))
    if family == "trunc_normal":
        side = Side.POSITIVE if rng.random() < 0.5 else Side.NEGATIVE
        return TruncNormal(rng.uniform(-3, 3), side), TruncNormal(rng.uniform(-3, 3), side)
    if family == "product_two_point":
        return ProductTwoPoint(rng.uniform(-4, 4, 5)), ProductTwoPoint(rng.uniform(-4, 4, 5))
    sides = np.where(rng.random(5) < 0.5, 1, -1)
    return (ProductTruncNormal(rng.uniform(-2, 2, 5), sides),
            ProductTruncNormal(rng.uniform(-2, 2, 5), sides))


PAIR_FAMILIES = ("uni_normal", "mv_normal", "gamma", "two_point", "trunc_normal",
                 "product_two_point", "product_trunc_normal")


class TestDensityConstruction:
    """Tests for parameter validation of the block densities."""

    def test_normal_rejects_non_positive_precision(self):
        """Test that precisions must be positive."""
        with pytest.raises(ParameterError):
            UniNormal(0.0, 0.0)
        with pytest.raises(ParameterError):
            UniNormal(0.0, -1.0)

    def test_normal_rejects_non_finite_mean(self):
        with pytest.raises(ParameterError):
            UniNormal(math.nan, 1.0)

    def test_mv_normal_rejects_indefinite_precision(self):
        """Test that a precision matrix must be positive-definite."""
        with pytest.raises(ParameterError):
            MVNormal([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_mv_normal_rejects_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            MVNormal([0.0, 0.0, 0.0], np.eye(2))

    def test_gamma_rejects_non_positive_parameters(self):
        with pytest.raises(ParameterError):
            Gamma(0.0, 1.0)
        with pytest.raises(ParameterError):
            Gamma(1.0, -2.0)

    def test_two_point_probabilities(self):
        """Test that the logit parameterizes the second category."""
        block = TwoPoint.from_prob(0.25)
        assert block.prob_second == pytest.approx(0.25, rel=1e-14)
        assert block.prob_first == pytest.approx(0.75, rel=1e-14)

    def test_two_point_rejects_boundary_probability(self):
        with pytest.raises(ParameterError):
            TwoPoint.from_prob(1.0)

    def test_product_trunc_normal_rejects_bad_sides(self):
        with pytest.raises(ParameterError):
            ProductTruncNormal([0.0, 1.0], [1, 0])

    def test_json_form_rebuilds_density(self):
        """Test that to_dict output rebuilds the same density."""
        blocks = [
            UniNormal(1.5, 2.0),
            MVNormal([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]]),
            Gamma(3.0, 0.5),
            TwoPoint(-1.2),
            TruncNormal(0.4, Side.NEGATIVE),
            ProductTruncNormal([0.1, -0.2], [1, -1]),
            ProductTwoPoint([0.5, -2.0, 1.0]),
        ]
        for block in blocks:
            assert densities_close(density_from_dict(block.to_dict()), block)

    def test_unknown_family_in_json(self):
        with pytest.raises(ParameterError):
            density_from_dict({"family": "cauchy"})


class TestKL:
    """Tests for the closed-form directed divergence."""

    def test_identical_gamma_is_zero(self):
        assert kl(Gamma(2.0, 1.0), Gamma(2.0, 1.0)) == 0.0

    def test_gamma_rate_change(self):
        """Test KL(Gamma(2,1) || Gamma(2,2)) = 2(1 - log 2)."""
        assert kl(Gamma(2.0, 1.0), Gamma(2.0, 2.0)) == pytest.approx(2.0 * (1.0 - math.log(2.0)), rel=1e-14)

    def test_gamma_shape_change_matches_definition(self):
        """Test the general gamma formula against its digamma expression."""
        from scipy.special import digamma, gammaln

        a0, b0, a1, b1 = 2.5, 1.5, 4.0, 0.7
        expected = (
            (a0 - a1) * digamma(a0) - gammaln(a0) + gammaln(a1)
            + a1 * (math.log(b0) - math.log(b1)) + a0 * (b1 - b0) / b0
        )
        assert kl(Gamma(a0, b0), Gamma(a1, b1)) == pytest.approx(expected, rel=1e-12)

    def test_unit_normals(self):
        """Test KL(N(0,1) || N(1,1)) = 0.5."""
        assert kl(UniNormal(0.0, 1.0), UniNormal(1.0, 1.0)) == pytest.approx(0.5, rel=1e-15)

    def test_normal_precision_change(self):
        """Test the precision term (r - 1 - log r)/2."""
        value = kl(UniNormal(0.0, 1.0), UniNormal(0.0, 4.0))
        assert value == pytest.approx(0.5 * (4.0 - 1.0 - math.log(4.0)), rel=1e-14)

    def test_mv_normal_reduces_to_scalar_sum(self):
        """Test that diagonal precisions give the sum of scalar divergences."""
        p = MVNormal([0.0, 1.0], np.diag([1.0, 2.0]))
        q = MVNormal([1.0, -1.0], np.diag([3.0, 0.5]))
        expected = kl(UniNormal(0.0, 1.0), UniNormal(1.0, 3.0)) + kl(UniNormal(1.0, 2.0), UniNormal(-1.0, 0.5))
        assert kl(p, q) == pytest.approx(expected, rel=1e-12)

    def test_two_point_matches_definition(self):
        p, q = TwoPoint.from_prob(0.7), TwoPoint.from_prob(0.2)
        expected = 0.7 * math.log(0.7 / 0.2) + 0.3 * math.log(0.3 / 0.8)
        assert kl(p, q) == pytest.approx(expected, rel=1e-12)

    def test_two_point_extreme_logits_stay_finite(self):
        value = kl(TwoPoint(40.0), TwoPoint(-40.0))
        assert math.isfinite(value)
        assert value > 0.0

    def test_product_two_point_sums_components(self):
        p = ProductTwoPoint([0.3, -1.0, 2.0])
        q = ProductTwoPoint([-0.5, 0.0, 1.5])
        expected = sum(kl(p.component(i), q.component(i)) for i in range(3))
        assert kl(p, q) == pytest.approx(expected, rel=1e-12)

    def test_product_trunc_normal_sums_components(self):
        p = ProductTruncNormal([0.3, -1.0], [1, -1])
        q = ProductTruncNormal([1.3, 0.5], [1, -1])
        expected = sum(kl(p.component(i), q.component(i)) for i in range(2))
        assert kl(p, q) == pytest.approx(expected, rel=1e-12)

    def test_non_negative_over_random_pairs(self, rng):
        """Test that every family gives non-negative values."""
        for _ in range(100):
            pairs = [
                (UniNormal(rng.normal(), rng.uniform(0.1, 5)), UniNormal(rng.normal(), rng.uniform(0.1, 5))),
                (Gamma(rng.uniform(0.5, 5), rng.uniform(0.1, 5)), Gamma(rng.uniform(0.5, 5), rng.uniform(0.1, 5))),
                (TwoPoint(rng.normal(0, 5)), TwoPoint(rng.normal(0, 5))),
                (TruncNormal(rng.normal(0, 3), Side.POSITIVE), TruncNormal(rng.normal(0, 3), Side.POSITIVE)),
            ]
            for p, q in pairs:
                assert kl(p, q) >= 0.0

    def test_family_mismatch(self):
        with pytest.raises(FamilyMismatchError):
            kl(UniNormal(0.0, 1.0), Gamma(1.0, 1.0))

    def test_side_mismatch(self):
        with pytest.raises(FamilyMismatchError):
            kl(TruncNormal(0.0, Side.POSITIVE), TruncNormal(0.0, Side.NEGATIVE))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            kl(MVNormal([0.0, 0.0], np.eye(2)), MVNormal([0.0, 0.0, 0.0], np.eye(3)))


class TestWeightedKL:
    """Tests for alpha KL(p||q) + (1 - alpha) KL(q||p)."""

    def test_identical_densities(self):
        block = Gamma(2.0, 1.0)
        for alpha in (0.0, 0.3, 1.0):
            assert kl_weighted(block, block, alpha) == 0.0

    def test_gamma_half_weight(self):
        """Test (a/2)(b1 - b0)^2/(b0 b1) = 0.5 for Gamma(2,1), Gamma(2,2)."""
        assert kl_weighted(Gamma(2.0, 1.0), Gamma(2.0, 2.0), 0.5) == pytest.approx(0.5, rel=1e-14)

    def test_endpoints_are_directed(self):
        p, q = UniNormal(0.0, 1.0), UniNormal(2.0, 3.0)
        assert kl_weighted(p, q, 1.0) == pytest.approx(kl(p, q), rel=1e-15)
        assert kl_weighted(p, q, 0.0) == pytest.approx(kl(q, p), rel=1e-15)

    def test_trunc_normal_half_weight(self):
        """Test D_1/2 = (a0 - a1)(E0 X - E1 X)/2 for positive truncations."""
        a0, a1 = 0.3, -1.1
        p, q = TruncNormal(a0, Side.POSITIVE), TruncNormal(a1, Side.POSITIVE)
        expected = 0.5 * (a0 - a1) * (mean(p) - mean(q))
        assert kl_weighted(p, q, 0.5) == pytest.approx(expected, rel=1e-12)

    def test_alpha_outside_unit_interval(self):
        with pytest.raises(ParameterError):
            kl_weighted(UniNormal(0.0, 1.0), UniNormal(1.0, 1.0), 1.5)

    @pytest.mark.parametrize("family", PAIR_FAMILIES)
    def test_mirrored_weights_average_to_half(self, family, rng):
        """Test D_a(p||q) + D_(1-a)(p||q) = 2 D_1/2(p||q)."""
        for _ in range(100):
            p, q = random_pair(family, rng)
            alpha = float(rng.uniform())
            mirrored = kl_weighted(p, q, alpha) + kl_weighted(p, q, 1.0 - alpha)
            assert mirrored == pytest.approx(2.0 * kl_weighted(p, q, 0.5), rel=1e-12, abs=1e-15)


class TestMeansAndDistances:
    """Tests for means, total variation and mixtures."""

    def test_normal_mean(self):
        assert mean(UniNormal(3.0, 2.0)) == 3.0

    def test_half_normal_mean(self):
        """Test that the mean of N(0,1) truncated to (0, inf) is H(0)."""
        assert mean(TruncNormal(0.0, Side.POSITIVE)) == pytest.approx(SQRT_2_OVER_PI, abs=1e-12)

    def test_negative_truncation_mirrors(self):
        assert mean(TruncNormal(-0.7, Side.NEGATIVE)) == pytest.approx(-mean(TruncNormal(0.7, Side.POSITIVE)), rel=1e-14)

    def test_two_point_mean_is_second_probability(self):
        assert mean(TwoPoint.from_prob(0.5)) == pytest.approx(0.5, abs=1e-15)

    def test_gamma_mean(self):
        assert mean(Gamma(3.0, 2.0)) == pytest.approx(1.5)

    def test_total_variation(self):
        assert tv_distance(TwoPoint.from_prob(0.5), TwoPoint.from_prob(0.5)) == 0.0
        assert tv_distance(TwoPoint.from_prob(0.9), TwoPoint.from_prob(0.1)) == pytest.approx(0.8, rel=1e-12)

    def test_total_variation_needs_two_point(self):
        with pytest.raises(FamilyMismatchError):
            tv_distance(UniNormal(0.0, 1.0), UniNormal(0.0, 1.0))

    def test_expit_difference_without_cancellation(self):
        slope = math.exp(-30.0) / (1.0 + math.exp(-30.0)) ** 2
        assert expit_difference(30.0, 30.0 + 1e-9) == pytest.approx(-slope * 1e-9, rel=1e-6)
        assert expit_difference(1.0, -1.0) == pytest.approx(expit(1.0) - expit(-1.0), rel=1e-14)

    def test_geometric_mix_endpoints(self):
        p, q = UniNormal(0.0, 1.0), UniNormal(2.0, 4.0)
        assert geometric_mix(p, q, 0.0) is p
        assert geometric_mix(p, q, 1.0) is q

    def test_geometric_mix_of_normals(self):
        """Test that precisions mix linearly and means by precision weight."""
        mixed = geometric_mix(UniNormal(0.0, 1.0), UniNormal(2.0, 3.0), 0.5)
        assert mixed.precision == pytest.approx(2.0)
        assert mixed.mean == pytest.approx((0.5 * 0.0 + 0.5 * 3.0 * 2.0) / 2.0)

    def test_geometric_mix_of_two_points(self):
        mixed = geometric_mix(TwoPoint(-2.0), TwoPoint(4.0), 0.25)
        assert mixed.logit == pytest.approx(-0.5)

    def test_densities_close(self):
        assert densities_close(UniNormal(0.0, 1.0), UniNormal(1e-14, 1.0))
        assert not densities_close(UniNormal(0.0, 1.0), UniNormal(1e-6, 1.0))
        assert not densities_close(UniNormal(0.0, 1.0), Gamma(1.0, 1.0))


class TestSpecialFunctions:
    """Tests for the hazard and Lambert W functions."""

    def test_hazard_at_zero(self):
        assert hazard(0.0) == pytest.approx(SQRT_2_OVER_PI, abs=1e-15)

    def test_hazard_left_tail(self):
        assert 0.0 <= hazard(-30.0) < 1e-100

    def test_hazard_increasing(self):
        assert hazard(1.0) > hazard(0.0)
        grid = np.linspace(-20.0, 40.0, 2001)
        assert np.all(np.diff(hazard(grid)) > 0.0)

    def test_hazard_right_tail_is_accurate(self):
        """Test H(t) ~ t + 1/t far in the right tail."""
        t = 50.0
        assert hazard(t) == pytest.approx(t + 1.0 / t - 2.0 / t ** 3, rel=1e-8)

    def test_lambert_fixed_values(self):
        assert lambert_w0(0.0) == 0.0
        assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-15)

    def test_lambert_residual(self):
        for x in (1e-8, 0.1, 1.0, 10.0, 1e3, 1e8):
            w = lambert_w0(x)
            assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, x)

    def test_lambert_rejects_negative(self):
        with pytest.raises(ParameterError):
            lambert_w0(-0.1)


class TestInequalities:
    """Tests for the inequalities used by the contraction bounds."""

    def test_pinsker_two_point(self):
        """Test 2 TV^2 <= KL in both directions."""
        p, q = TwoPoint.from_prob(0.7), TwoPoint.from_prob(0.5)
        tv = tv_distance(p, q)
        assert 2.0 * tv * tv <= kl(p, q)
        assert 2.0 * tv * tv <= kl(q, p)

    def test_pinsker_random_pairs(self, rng):
        for _ in range(1000):
            p, q = TwoPoint(rng.uniform(-8, 8)), TwoPoint(rng.uniform(-8, 8))
            tv = tv_distance(p, q)
            assert 2.0 * tv * tv <= min(kl(p, q), kl(q, p)) * (1.0 + 1e-12) + 1e-300

    def test_gaussian_transport(self, rng):
        """Test (m_p - m_q)^2 <= 2 KL(p||q) / tau_q."""
        for _ in range(1000):
            p = UniNormal(rng.normal(0, 3), 10.0 ** rng.uniform(-1, 1))
            q = UniNormal(rng.normal(0, 3), 10.0 ** rng.uniform(-1, 1))
            shift = (p.mean - q.mean) ** 2
            assert shift <= 2.0 * kl(p, q) / q.precision * (1.0 + 1e-12) + 1e-15

    def test_trunc_normal_mean_contraction(self, rng):
        """Test |E_a0 X - E_a1 X| < |a0 - a1| on both sides."""
        a0 = rng.uniform(-6.0, 6.0, 1000)
        a1 = rng.uniform(-6.0, 6.0, 1000)
        for side in (1.0, -1.0):
            sides = np.full(1000, side)
            gap = np.abs(trunc_normal_means(a0, sides) - trunc_normal_means(a1, sides))
            assert np.all(gap <= np.abs(a0 - a1))

    def test_hazard_derivative_in_unit_interval(self):
        """Test 0 < H'(t) = H(t)(H(t) - t) < 1."""
        t = np.linspace(-30.0, 30.0, 6001)
        h = hazard(t)
        derivative = h * (h - t)
        assert np.all(derivative > 0.0)
        assert np.all(derivative < 1.0)

    def test_two_point_logit_round_trip(self):
        assert TwoPoint(float(logit(0.3))).prob_second == pytest.approx(0.3, rel=1e-14)
