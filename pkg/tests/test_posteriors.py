"""Tests for Gibbs, Gaussian-shift and dropout posteriors."""

import json
import math

import numpy as np
import pytest

from pacbayes_toolkit.bounds import BoundKind, pac_bayes_bound
from pacbayes_toolkit.hypothesis_spaces import (
    BoundedLoss,
    FiniteHypothesisSpace,
    SampleSet,
    empirical_losses,
)
from pacbayes_toolkit.posteriors import (
    DropoutPosterior,
    GaussianShiftPosterior,
    GibbsPosterior,
    SparsityPattern,
    draw_weights,
    dropout_kl,
    dropout_kl_mc,
    gaussian_kl,
    gaussian_kl_mc,
    gibbs_algorithm,
    gibbs_from_losses,
    gibbs_objective,
    gibbs_weights,
    kl_discrete,
    log_partition,
    point_mass,
    posterior_from_dict,
    posterior_objective,
    posterior_to_dict,
    sample_dropout,
    sample_gaussian,
    select_lambda,
)
from pacbayes_toolkit.results import dumps
from pacbayes_toolkit.rng import stream
from pacbayes_toolkit.worlds import draw_sample


@pytest.fixture
def two_hypotheses():
    """h₁ never loses, h₂ always loses; ten draws of the only situation."""
    space = FiniteHypothesisSpace.uniform(2)
    loss = BoundedLoss.from_table([[0.0], [1.0]], 1.0)
    return space, loss, SampleSet((0,) * 10)


def _table(world_bundle):
    world, space, loss = world_bundle
    return loss.clipped_table(len(space), world.n_situations)


# ── Gibbs posterior ──────────────────────────────────────────────────────

class TestGibbsWeights:
    def test_two_hypothesis_closed_form(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        q = gibbs_weights(space, sample, loss, 1.0)
        assert q.weights[0] == pytest.approx(1.0 / (1.0 + math.exp(-10.0)), rel=1e-12)
        assert q.weights[0] == pytest.approx(0.9999546, abs=1e-7)

    def test_constant_losses_give_prior(self):
        space = FiniteHypothesisSpace((0, 1, 2), np.array([0.2, 0.3, 0.5]))
        q = gibbs_from_losses(space, np.full(3, 0.4), 50, 1.0, 1.0)
        np.testing.assert_allclose(q.weights, space.prior, rtol=1e-12)

    def test_huge_temperature_gives_prior(self, world_20x10, rng):
        world, space, loss = world_20x10
        sample = draw_sample(world, 50, rng)
        q = gibbs_weights(space, sample, loss, 1e12)
        assert 0.5 * np.abs(q.weights - space.prior).sum() < 1e-9

    def test_large_inverse_temperature_is_stable(self, world_20x10, rng):
        world, space, loss = world_20x10
        l_hat = empirical_losses(_table(world_20x10), draw_sample(world, 100, rng))
        q = gibbs_from_losses(space, l_hat, 20_000, 0.5, 1.0)
        assert np.all(np.isfinite(q.log_weights))
        assert q.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(q.weights) == np.argmin(l_hat)

    def test_log_weights_match_partition(self, world_20x10, rng):
        world, space, loss = world_20x10
        l_hat = empirical_losses(_table(world_20x10), draw_sample(world, 40, rng))
        q = gibbs_from_losses(space, l_hat, 40, 2.0, loss.l_max)
        log_z = log_partition(space, l_hat, 40, 2.0, loss.l_max)
        expected = space.log_prior - 40 * l_hat / (2.0 * loss.l_max) - log_z
        np.testing.assert_allclose(q.log_weights, expected, rtol=1e-12, atol=1e-12)

    def test_zero_prior_hypothesis_gets_no_mass(self):
        space = FiniteHypothesisSpace((0, 1, 2), np.array([0.5, 0.5, 0.0]))
        q = gibbs_from_losses(space, np.array([0.3, 0.6, 0.0]), 10, 1.0, 1.0)
        assert q.weights[2] == 0.0
        assert q.kl() < math.inf

    def test_non_positive_lambda_rejected(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        with pytest.raises(ValueError, match="lambda must be > 0"):
            gibbs_weights(space, sample, loss, 0.0)
        with pytest.raises(ValueError, match="lambda must be > 0"):
            log_partition(space, np.zeros(2), 10, -1.0, 1.0)

    def test_provenance_recorded(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        q = gibbs_weights(space, sample, loss, 1.0)
        assert q.provenance == {"l_max": 1.0, "n": 10}

    def test_temperature_monotone_on_minimisers(self, world_20x10, rng):
        world, space, loss = world_20x10
        l_hat = empirical_losses(_table(world_20x10), draw_sample(world, 30, rng))
        best = l_hat == l_hat.min()
        masses = [
            float(gibbs_from_losses(space, l_hat, 30, lam, loss.l_max).weights[best].sum())
            for lam in (64.0, 16.0, 4.0, 1.0, 0.25, 0.0625)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(masses, masses[1:]))

    def test_algorithm_matches_weights(self, tiny_world):
        _, space, loss = tiny_world
        algorithm = gibbs_algorithm(space, loss, 2.0)
        sample = SampleSet((0, 2, 2, 1))
        np.testing.assert_array_equal(algorithm(sample), gibbs_weights(space, sample, loss, 2.0).weights)
        assert algorithm.__name__ == "gibbs_lambda_2"


class TestGibbsPosteriorType:
    def test_weights_must_normalise(self):
        with pytest.raises(ValueError, match="sum to 1"):
            GibbsPosterior(FiniteHypothesisSpace.uniform(2), 1.0, 1.0, np.log([0.5, 0.4]))

    def test_support_inside_prior(self):
        space = FiniteHypothesisSpace((0, 1), np.array([1.0, 0.0]))
        with pytest.raises(ValueError, match="support"):
            GibbsPosterior(space, 1.0, 1.0, np.log([0.5, 0.5]))

    def test_shape_checked(self):
        with pytest.raises(ValueError, match="one log-weight"):
            GibbsPosterior(FiniteHypothesisSpace.uniform(3), 1.0, 1.0, np.log([0.5, 0.5]))

    def test_log_weights_read_only(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        q = gibbs_weights(space, sample, loss, 1.0)
        with pytest.raises(ValueError):
            q.log_weights[0] = 0.0


class TestPointMassAndKL:
    def test_point_mass(self):
        np.testing.assert_array_equal(point_mass(FiniteHypothesisSpace.uniform(3), 1), [0.0, 1.0, 0.0])

    def test_point_mass_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            point_mass(FiniteHypothesisSpace.uniform(3), 3)

    def test_equal_distributions(self):
        p = np.array([0.1, 0.2, 0.7])
        assert kl_discrete(p, p) == 0.0

    def test_point_mass_against_uniform(self):
        assert kl_discrete([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_charging_null_hypothesis_is_infinite(self):
        assert kl_discrete([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_matches_term_by_term_sum(self, rng):
        for _ in range(20):
            q = rng.dirichlet(np.ones(6))
            p = rng.dirichlet(np.ones(6))
            expected = sum(qi * math.log(qi / pi) for qi, pi in zip(q, p))
            assert kl_discrete(q, p) == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            kl_discrete([0.5, 0.5], [1.0, 0.0, 0.0])

    def test_not_a_distribution(self):
        with pytest.raises(ValueError, match="probability vector"):
            kl_discrete([0.6, 0.6], [0.5, 0.5])


class TestGibbsObjective:
    def test_two_hypothesis_value(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        q = gibbs_weights(space, sample, loss, 1.0)
        q2 = 1.0 / (1.0 + math.exp(10.0))
        kl = (1 - q2) * math.log((1 - q2) / 0.5) + q2 * math.log(q2 / 0.5)
        assert gibbs_objective(q, sample, loss) == pytest.approx(q2 + kl / 10.0, rel=1e-12)

    def test_optimum_equals_minus_scaled_log_partition(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        q = gibbs_weights(space, sample, loss, 1.0)
        log_z = log_partition(space, np.array([0.0, 1.0]), 10, 1.0, 1.0)
        assert gibbs_objective(q, sample, loss) == pytest.approx(-log_z / 10.0, rel=1e-12)

    def test_huge_lambda_approaches_prior_loss(self, world_20x10, rng):
        world, space, loss = world_20x10
        sample = draw_sample(world, 25, rng)
        l_hat = empirical_losses(_table(world_20x10), sample)
        q = gibbs_weights(space, sample, loss, 1e6)
        assert gibbs_objective(q, sample, loss) == pytest.approx(float(space.prior @ l_hat), abs=1e-4)

    def test_optimal_against_dirichlet_cloud(self, world_20x10, rng):
        world, space, loss = world_20x10
        sample = draw_sample(world, 30, rng)
        l_hat = empirical_losses(_table(world_20x10), sample)
        q = gibbs_from_losses(space, l_hat, 30, 1.5, loss.l_max)
        best = posterior_objective(q.weights, space, l_hat, 30, 1.5, loss.l_max)
        cloud = rng.dirichlet(np.ones(len(space)), size=1000)
        for other in cloud:
            other = other / other.sum()
            assert posterior_objective(other, space, l_hat, 30, 1.5, loss.l_max) >= best - 1e-12


class TestSelectLambda:
    def test_singleton_grid(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        lam, q, report = select_lambda([2.0], sample, space, loss, 0.05)
        direct = pac_bayes_bound(float(q.weights @ np.array([0.0, 1.0])), q.kl(), 10, 0.05, 1.0, 2.0)
        assert lam == 2.0
        assert report.value == pytest.approx(direct.value, rel=1e-15)
        assert report.kind == BoundKind.PAC_BAYES_GRID
        assert report.delta == 0.05

    def test_matches_exhaustive_evaluation(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        l_hat = np.array([0.0, 1.0])
        values = {}
        for lam in (1.0, 2.0, 4.0):
            q = gibbs_from_losses(space, l_hat, 10, lam, 1.0)
            values[lam] = pac_bayes_bound(float(q.weights @ l_hat), q.kl(), 10, 0.05 / 3, 1.0, lam).value
        lam, _, report = select_lambda([1.0, 2.0, 4.0], sample, space, loss, 0.05)
        assert lam == min(values, key=values.get)
        assert report.value == pytest.approx(min(values.values()), rel=1e-15)

    def test_larger_grid_costs_at_most_union_penalty(self, world_20x10, rng):
        world, space, loss = world_20x10
        sample = draw_sample(world, 40, rng)
        small = select_lambda([1.0, 2.0], sample, space, loss, 0.05)[2]
        large = select_lambda([1.0, 2.0, 4.0, 8.0], sample, space, loss, 0.05)[2]
        lam = small.lambda_
        extra = lam * loss.l_max / (40 * (1 - 1 / (2 * lam))) * math.log(2.0)
        assert large.value <= small.value + extra + 1e-12

    def test_empty_grid_rejected(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        with pytest.raises(ValueError, match="non-empty"):
            select_lambda([], sample, space, loss, 0.05)

    def test_lambda_at_half_rejected(self, two_hypotheses):
        space, loss, sample = two_hypotheses
        with pytest.raises(ValueError, match="> 1/2"):
            select_lambda([1.0, 0.5], sample, space, loss, 0.05)


# ── Continuous posteriors ────────────────────────────────────────────────

class TestContinuousKL:
    def test_gaussian_kl_values(self):
        assert gaussian_kl(np.zeros(3)) == 0.0
        assert gaussian_kl([1.0, 1.0, 1.0, 1.0]) == 2.0

    def test_dropout_kl_values(self):
        theta = np.array([1.0, -1.0, 1.0, 1.0])
        assert dropout_kl(DropoutPosterior(1.0, theta)) == 0.0
        assert dropout_kl(DropoutPosterior(0.0, theta)) == gaussian_kl(theta)
        assert dropout_kl(DropoutPosterior(0.5, theta)) == 1.0

    def test_kl_method_dispatch(self):
        theta = np.array([3.0, 4.0])
        assert GaussianShiftPosterior(theta).kl() == 12.5
        assert DropoutPosterior(0.2, theta).kl() == pytest.approx(10.0, rel=1e-15)

    def test_gaussian_mc_within_three_se(self):
        theta = np.array([0.5, -1.0, 2.0, 0.0])
        est, se = gaussian_kl_mc(theta, 100_000, stream(11, "gaussian_kl"))
        assert abs(est - gaussian_kl(theta)) <= 3 * se

    @pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.9])
    def test_dropout_mc_within_three_se(self, alpha):
        posterior = DropoutPosterior(alpha, np.array([1.0, 1.0, -1.0, 1.0]))
        est, se = dropout_kl_mc(posterior, 100_000, stream(12, "dropout_kl", int(alpha * 100)))
        assert abs(est - posterior.kl()) <= 3 * se

    def test_full_dropout_mc_is_exact_zero(self, rng):
        est, se = dropout_kl_mc(DropoutPosterior(1.0, np.ones(3)), 1000, rng)
        assert est == 0.0
        assert se == 0.0

    def test_mc_needs_two_draws(self, rng):
        with pytest.raises(ValueError, match="n_draws"):
            dropout_kl_mc(DropoutPosterior(0.5, np.ones(2)), 1, rng)

    @pytest.mark.slow
    def test_mc_at_full_scale(self):
        rng = stream(13, "kl_full_scale")
        theta = rng.standard_normal(10)
        est, se = gaussian_kl_mc(theta, 1_000_000, rng)
        assert abs(est - gaussian_kl(theta)) <= 3 * se
        posterior = DropoutPosterior(0.25, theta)
        est, se = dropout_kl_mc(posterior, 1_000_000, rng)
        assert abs(est - posterior.kl()) <= 3 * se


class TestContinuousTypes:
    def test_alpha_range(self):
        with pytest.raises(ValueError, match="alpha"):
            DropoutPosterior(1.5, np.ones(2))

    def test_theta_finite(self):
        with pytest.raises(ValueError, match="finite"):
            GaussianShiftPosterior(np.array([1.0, np.nan]))

    def test_theta_non_empty(self):
        with pytest.raises(ValueError, match="non-empty"):
            GaussianShiftPosterior(np.array([]))

    def test_theta_copied_and_frozen(self):
        theta = np.array([1.0, 2.0])
        posterior = GaussianShiftPosterior(theta)
        theta[0] = 9.0
        assert posterior.theta[0] == 1.0
        with pytest.raises(ValueError):
            posterior.theta[1] = 0.0

    def test_sparsity_pattern_bits(self):
        assert SparsityPattern(np.array([1, 0, 1])).bits.dtype == np.int8
        with pytest.raises(ValueError, match="exactly 0 or 1"):
            SparsityPattern(np.array([0, 1, 2]))
        with pytest.raises(ValueError, match="exactly 0 or 1"):
            SparsityPattern(np.array([0.5, 1.0]))


class TestSamplers:
    def test_gaussian_reproducible(self):
        posterior = GaussianShiftPosterior(np.array([1.0, -2.0, 0.5]))
        a = sample_gaussian(posterior, stream(5, "draw"))
        b = sample_gaussian(posterior, stream(5, "draw"))
        np.testing.assert_array_equal(a, b)

    def test_gaussian_moments(self):
        theta = np.array([1.0, -2.0, 0.5])
        masks, noise = draw_weights(GaussianShiftPosterior(theta), 200_000, stream(6, "moments"))
        draws = masks * (theta + noise)
        se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - theta) <= 4 * se)
        var_se = math.sqrt(2.0 / len(draws))
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - 1.0) <= 4 * var_se)

    def test_dropout_without_dropping_is_gaussian(self):
        theta = np.array([0.3, -0.7, 1.1])
        pattern, weights = sample_dropout(DropoutPosterior(0.0, theta), stream(8, "same"))
        gaussian = sample_gaussian(GaussianShiftPosterior(theta), stream(8, "same"))
        np.testing.assert_array_equal(pattern.bits, [1, 1, 1])
        np.testing.assert_array_equal(weights, gaussian)

    def test_full_dropout_is_zero(self, rng):
        posterior = DropoutPosterior(1.0, np.array([5.0, -5.0]))
        for _ in range(10):
            pattern, weights = sample_dropout(posterior, rng)
            assert not pattern.bits.any()
            assert np.all(weights == 0.0)

    def test_dropout_rate(self):
        masks, _ = draw_weights(DropoutPosterior(0.3, np.zeros(5)), 100_000, stream(9, "rate"))
        zeros = 1.0 - masks
        pooled_se = math.sqrt(0.3 * 0.7 / zeros.size)
        assert abs(zeros.mean() - 0.3) <= 3 * pooled_se
        per_coord_se = math.sqrt(0.3 * 0.7 / len(zeros))
        assert np.all(np.abs(zeros.mean(axis=0) - 0.3) <= 4 * per_coord_se)


# ── Serialisation ────────────────────────────────────────────────────────

class TestSerialisation:
    def _reload(self, posterior):
        return posterior_from_dict(json.loads(dumps(posterior_to_dict(posterior))))

    def test_gibbs(self, world_20x10, rng):
        world, space, loss = world_20x10
        q = gibbs_weights(space, draw_sample(world, 30, rng), loss, 2.0)
        assert self._reload(q) == q

    def test_dropout(self):
        posterior = DropoutPosterior(0.25, np.array([0.1, -3.0]))
        assert self._reload(posterior) == posterior

    def test_gaussian(self):
        posterior = GaussianShiftPosterior(np.array([1 / 3, 2 / 7]))
        assert self._reload(posterior) == posterior

    def test_kind_tags(self):
        assert posterior_to_dict(GaussianShiftPosterior(np.ones(1)))["kind"] == "gaussian"
        assert posterior_to_dict(DropoutPosterior(0.5, np.ones(1)))["kind"] == "dropout"

    def test_unknown_kind(self):
        with pytest.raises(KeyError, match="No posterior kind named 'beta'"):
            posterior_from_dict({"kind": "beta"})

    def test_unknown_type(self):
        with pytest.raises(TypeError):
            posterior_to_dict(np.ones(3))
