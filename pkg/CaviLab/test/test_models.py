"""
Unit tests for the target models.

Tests cover:
- Block updates of every family
- Fixed points, closed-form and iterated
- Interaction terms and objective gaps
- Synthetic data generation
- Validation errors and JSON round trips
"""

import math

import numpy as np
import pytest

from CaviLab.core.divergences import Gamma, MVNormal, TwoPoint, UniNormal, kl
from CaviLab.core.exceptions import (
    BlockIndexError,
    DimensionMismatchError,
    FamilyMismatchError,
    ParameterError,
    UnsupportedModelError,
)
from CaviLab.core.models import (
    GMM2,
    GOLDEN_RATIO,
    CompoundSymmetry,
    Discrete2d,
    GaussConditionals,
    GaussianBlocks,
    GaussMeanPrec,
    MeanFieldState,
    Probit,
    block_update,
    delta_block,
    delta_n,
    fixed_point,
    generate_data,
    initial_state,
    model_from_dict,
    objective_gap,
    orthogonal_design,
    stacked_means,
    stationarity_residual,
)

pytestmark = pytest.mark.unit


def normals(*means, precision=1.0):
    return MeanFieldState(tuple(UniNormal(m, precision) for m in means))


class TestBlockUpdate:
    """Tests for the exact single-block CAVI update."""

    def test_gauss_conditionals_precision(self):
        """Test tau_1 = 1 + E U_2^2 = 2 from a unit-precision second block."""
        model = GaussConditionals()
        updated = block_update(model, normals(0.0, 0.0), 0)
        assert updated.mean == 0.0
        assert updated.precision == pytest.approx(2.0)

    def test_independent_discrete_target(self):
        """Test that p = 0.5 decouples the blocks."""
        model = Discrete2d(0.5)
        state = MeanFieldState((TwoPoint(1.3), TwoPoint(-2.0)))
        for j in (0, 1):
            assert block_update(model, state, j).prob_second == pytest.approx(0.5, abs=1e-15)

    def test_discrete_update_rule(self):
        model = Discrete2d(0.7)
        state = MeanFieldState((TwoPoint(0.0), TwoPoint(1.0)))
        expected = -math.log(0.7 / 0.3) * math.tanh(0.5)
        assert block_update(model, state, 0).logit == pytest.approx(expected, rel=1e-14)

    def test_compound_symmetry_update(self):
        """Test m_1 <- -rho (m_2 + m_3) = -0.4."""
        model = CompoundSymmetry(3, 0.2)
        updated = block_update(model, normals(1.0, 1.0, 1.0), 0)
        assert updated.mean == pytest.approx(-0.4)
        assert updated.precision == 1.0

    def test_gaussian_update(self, reference_gaussian):
        updated = block_update(reference_gaussian, normals(1.0, 1.0), 1)
        assert updated.mean == pytest.approx(-0.5)
        assert updated.precision == pytest.approx(1.0)

    def test_gaussian_multivariate_block(self):
        """Test that a 2-dimensional block solves against its own precision."""
        Q = np.array([[2.0, 0.3, 0.4], [0.3, 1.5, 0.2], [0.4, 0.2, 1.0]])
        model = GaussianBlocks([1.0, -1.0, 0.5], Q, (2, 1))
        state = MeanFieldState((MVNormal([1.0, -1.0], Q[:2, :2]), UniNormal(1.5, 1.0)))
        updated = block_update(model, state, 0)
        expected = np.array([1.0, -1.0]) - np.linalg.solve(Q[:2, :2], Q[:2, 2] * 1.0)
        assert np.allclose(updated.mean, expected, atol=1e-14)

    def test_mean_precision_update(self):
        """Test s = n E tau + kappa and m = n E tau xbar / s."""
        model = GaussMeanPrec(np.array([1.0, 2.0, 3.0, 6.0]), kappa=2.0)
        state = MeanFieldState((UniNormal(0.0, 1.0), Gamma(3.0, 1.5)))
        updated = block_update(model, state, 0)
        assert updated.precision == pytest.approx(4 * 2.0 + 2.0)
        assert updated.mean == pytest.approx(4 * 2.0 * 3.0 / 10.0)

    def test_mean_precision_rate_update(self):
        x = np.array([1.0, 2.0, 3.0, 6.0])
        model = GaussMeanPrec(x, a0=1.0, b0=0.5)
        state = MeanFieldState((UniNormal(2.0, 4.0), Gamma(3.0, 1.5)))
        updated = block_update(model, state, 1)
        ss = float(np.sum((x - 3.0) ** 2))
        assert updated.shape == pytest.approx(3.0)
        assert updated.rate == pytest.approx(0.5 + 0.5 * (ss + 4 * (1.0 + 0.25)))

    def test_index_out_of_range(self, reference_gaussian):
        with pytest.raises(BlockIndexError):
            block_update(reference_gaussian, normals(0.0, 0.0), 2)

    def test_wrong_family(self, reference_gaussian):
        state = MeanFieldState((TwoPoint(0.0), TwoPoint(0.0)))
        with pytest.raises(FamilyMismatchError):
            block_update(reference_gaussian, state, 0)

    def test_wrong_block_count(self, reference_gaussian):
        with pytest.raises(DimensionMismatchError):
            block_update(reference_gaussian, normals(0.0, 0.0, 0.0), 0)


class TestFixedPoint:
    """Tests for the mean-field optimum."""

    def test_golden_ratio(self):
        qstar = fixed_point(GaussConditionals())
        for block in qstar:
            assert block.mean == 0.0
            assert block.precision == pytest.approx((1.0 + math.sqrt(5.0)) / 2.0, rel=1e-15)
        assert GOLDEN_RATIO == pytest.approx(1.618033988749895)

    def test_gaussian_fixed_point(self, reference_gaussian):
        qstar = fixed_point(reference_gaussian)
        assert [block.mean for block in qstar] == [0.0, 0.0]
        assert [block.precision for block in qstar] == [1.0, 1.0]

    def test_discrete_fixed_point(self):
        qstar = fixed_point(Discrete2d(0.7))
        assert all(block.prob_second == 0.5 for block in qstar)

    def test_closed_forms_are_stationary(self, reference_gaussian):
        for model in (GaussConditionals(), reference_gaussian, Discrete2d(0.3), CompoundSymmetry(4, 0.2)):
            assert stationarity_residual(model, fixed_point(model)) <= 1e-24

    def test_iterated_fixed_points(self):
        """Test that data-driven targets reach the stationarity tolerance."""
        models = [
            generate_data("gauss_mean_prec", {"n": 200, "mu": 1.0}, 3),
            generate_data("probit", {"n": 100, "p": 3, "beta_true": 0.5}, 3),
            generate_data("gmm2", {"n": 200, "mu_true": 4.0, "truncate": 2.0}, 3),
        ]
        for model in models:
            qstar = fixed_point(model)
            assert stationarity_residual(model, qstar) <= 1e-12

    def test_invalid_damping(self):
        with pytest.raises(ParameterError):
            fixed_point(GaussConditionals(), damping=0.0)


class TestInteraction:
    """Tests for Delta_n and the objective gap."""

    def test_zero_at_fixed_point(self, reference_gaussian):
        for model in (reference_gaussian, GaussConditionals(), Discrete2d(0.8)):
            qstar = fixed_point(model)
            assert delta_n(model, qstar, qstar) == 0.0

    def test_gaussian_unit_shifts(self, reference_gaussian):
        """Test -n delta_1 Q_12 delta_2 = -0.5."""
        qstar = fixed_point(reference_gaussian)
        assert delta_n(reference_gaussian, normals(1.0, 1.0), qstar) == pytest.approx(-0.5)

    def test_discrete_summation_value(self):
        """Test 2 (0.1)(0.1) log(3/7) for p = 0.7 and q_j(first) = 0.6."""
        model = Discrete2d(0.7)
        block = TwoPoint.from_prob(0.4)
        state = MeanFieldState((block, block))
        assert delta_n(model, state, fixed_point(model)) == pytest.approx(0.02 * math.log(3.0 / 7.0), rel=1e-12)

    def test_gauss_conditionals_second_moments(self):
        """Test -(1/tau_1 - 1/phi)(1/tau_2 - 1/phi)/2 for centered blocks."""
        model = GaussConditionals()
        state = MeanFieldState((UniNormal(0.0, 2.0), UniNormal(0.0, 2.0)))
        expected = -0.5 * (0.5 - 1.0 / GOLDEN_RATIO) ** 2
        assert delta_n(model, state, fixed_point(model)) == pytest.approx(expected, rel=1e-13)

    def test_block_interaction_is_symmetric_for_two_blocks(self, reference_gaussian):
        qstar = fixed_point(reference_gaussian)
        state = normals(0.3, -1.2)
        assert delta_block(reference_gaussian, state, qstar, 0) == pytest.approx(
            delta_block(reference_gaussian, state, qstar, 1)
        )

    def test_delta_n_needs_two_blocks(self):
        model = CompoundSymmetry(3, 0.2)
        qstar = fixed_point(model)
        with pytest.raises(UnsupportedModelError):
            delta_n(model, qstar, qstar)

    def test_objective_gap_at_fixed_point(self, reference_gaussian):
        qstar = fixed_point(reference_gaussian)
        assert objective_gap(reference_gaussian, qstar, qstar) == 0.0

    def test_objective_gap_single_block(self, reference_gaussian):
        """Test F(q_1 x q_2*) - F(q*) = KL(q_1 || q_1*)."""
        qstar = fixed_point(reference_gaussian)
        state = MeanFieldState((UniNormal(0.7, 2.0), qstar[1]))
        assert objective_gap(reference_gaussian, state, qstar) == pytest.approx(kl(state[0], qstar[0]), rel=1e-14)

    def test_objective_gap_unit_shifts(self, reference_gaussian):
        """Test 0.5 + 0.5 - (-0.5) = 1.5."""
        qstar = fixed_point(reference_gaussian)
        assert objective_gap(reference_gaussian, normals(1.0, 1.0), qstar) == pytest.approx(1.5)

    def test_objective_gap_single_block_two_point(self):
        model = Discrete2d(0.65)
        qstar = fixed_point(model)
        state = MeanFieldState((TwoPoint(0.8), qstar[1]))
        assert objective_gap(model, state, qstar) == pytest.approx(kl(state[0], qstar[0]), rel=1e-14)


class TestGenerateData:
    """Tests for seeded synthetic data."""

    def test_deterministic(self):
        first = generate_data("probit", {"n": 50, "p": 3}, 11)
        second = generate_data("probit", {"n": 50, "p": 3}, 11)
        assert np.array_equal(first.X, second.X)
        assert np.array_equal(first.y, second.y)

    def test_probit_balanced_labels(self):
        model = generate_data("probit", {"n": 200, "p": 5, "beta_true": 0.0}, 0)
        assert isinstance(model, Probit)
        assert 0.4 <= float(np.mean(model.y)) <= 0.6

    def test_mean_precision_sample_mean(self):
        model = generate_data("gauss_mean_prec", {"n": 500, "mu": 2.0, "tau": 1.0}, 0)
        assert abs(model.xbar - 2.0) <= 3.0 / math.sqrt(500)

    def test_truncated_mixture_is_compact(self):
        model = generate_data("gmm2", {"n": 500, "mu_true": 4.0, "truncate": 1.5}, 7)
        assert isinstance(model, GMM2)
        distance = np.minimum(np.abs(model.x), np.abs(model.x - 4.0))
        assert np.all(distance <= 1.5)

    def test_orthogonal_design(self, rng):
        X = orthogonal_design(100, 4, rng)
        assert np.allclose(X.T @ X, 100.0 * np.eye(4), atol=1e-10)

    def test_no_generator_for_discrete(self):
        with pytest.raises(UnsupportedModelError):
            generate_data("discrete2d", {}, 0)

    def test_invalid_size(self):
        with pytest.raises(ParameterError):
            generate_data("probit", {"n": 0}, 0)


class TestValidation:
    """Tests for parameter checks, initialization and JSON forms."""

    def test_discrete_p_range(self):
        with pytest.raises(ParameterError):
            Discrete2d(1.0)

    def test_compound_symmetry_rho_range(self):
        with pytest.raises(ParameterError):
            CompoundSymmetry(3, -0.5)

    def test_gaussian_requires_positive_definite(self):
        with pytest.raises(ParameterError):
            GaussianBlocks([0.0, 0.0], [[1.0, 1.5], [1.5, 1.0]], (1, 1))

    def test_partition_must_cover_dimension(self):
        with pytest.raises(ParameterError):
            GaussianBlocks([0.0, 0.0, 0.0], np.eye(3), (1, 1))

    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            model_from_dict({"family": "ising3"})

    def test_model_round_trip(self, reference_gaussian):
        models = [
            reference_gaussian,
            CompoundSymmetry(5, 0.15),
            Discrete2d(0.3),
            GaussConditionals(),
            generate_data("gauss_mean_prec", {"n": 20}, 1),
        ]
        for model in models:
            rebuilt = model_from_dict(model.to_dict())
            assert type(rebuilt) is type(model)
            assert rebuilt.to_dict() == model.to_dict()

    def test_state_round_trip(self):
        state = MeanFieldState((UniNormal(0.5, 2.0), Gamma(2.0, 3.0)))
        assert MeanFieldState.from_dict(state.to_dict()).close_to(state)

    def test_initial_state_shifts_means(self, reference_gaussian):
        """Test that the default start sits 5 posterior sd away from q*."""
        qstar = fixed_point(reference_gaussian)
        init = initial_state(reference_gaussian, qstar, 5.0)
        assert np.allclose(stacked_means(init), [5.0, 5.0])
        assert [block.precision for block in init] == [1.0, 1.0]

    def test_initial_state_per_block(self, reference_gaussian):
        qstar = fixed_point(reference_gaussian)
        init = initial_state(reference_gaussian, qstar, [1.0, 0.0])
        assert np.allclose(stacked_means(init), [1.0, 0.0])
        with pytest.raises(ParameterError):
            initial_state(reference_gaussian, qstar, [1.0, 2.0, 3.0])

    def test_gauss_conditionals_start_keeps_means(self):
        model = GaussConditionals()
        init = initial_state(model, fixed_point(model), 2.0)
        assert all(block.mean == 0.0 for block in init)
        assert all(block.precision > GOLDEN_RATIO for block in init)

    def test_with_params(self):
        assert CompoundSymmetry(4, 0.1).with_params(rho=0.3).rho == 0.3
