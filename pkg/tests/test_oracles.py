"""Tests for the brute-force lemma oracles."""

import math

import numpy as np
import pytest

from pacbayes_toolkit.hypothesis_spaces import BoundedLoss, true_losses
from pacbayes_toolkit.models import LinearBinaryModel, separable_toy_dataset
from pacbayes_toolkit.oracles import (
    binary_closed_form_check,
    chernoff_check,
    gibbs_optimality_check,
    kl_closed_form_check,
    kl_moment_exact,
    moment_bound_check,
    moment_bound_exact,
    shift_of_measure_check,
    shift_of_measure_gap,
    within_se,
)
from pacbayes_toolkit.posteriors import DropoutPosterior, GaussianShiftPosterior
from pacbayes_toolkit.rng import stream


def _lossy_hypothesis(world_bundle) -> int:
    world, space, loss = world_bundle
    mu = true_losses(loss.clipped_table(len(space), world.n_situations), world)
    return int(np.argmin(np.abs(mu - 0.5)))


class TestChernoff:
    def test_ceiling_holds(self, world_20x10):
        h = _lossy_hypothesis(world_20x10)
        df = chernoff_check(world_20x10[0], h, world_20x10[2], 30, np.linspace(0.0, 0.3, 7), 4000, stream(70, "c"))
        assert list(df.columns) == ["epsilon", "frequency", "ceiling", "binomial_se", "flagged"]
        assert not df["flagged"].any()
        assert df["ceiling"].iloc[0] == 1.0
        assert df["ceiling"].is_monotonic_decreasing

    def test_zero_loss_hypothesis_rejected(self, tiny_world):
        world, _, _ = tiny_world
        loss = BoundedLoss.from_table(np.zeros((1, 3)), 1.0)
        with pytest.raises(ValueError, match="zero true loss"):
            chernoff_check(world, 0, loss, 10, [0.1], 10, stream(71, "c"))


class TestExponentialMoment:
    @pytest.mark.parametrize("gamma", [-5.0, -1.0, -0.25, 0.5, 3.0])
    def test_exact_moment_is_one(self, gamma):
        assert moment_bound_exact(0.3, 25, gamma) == pytest.approx(1.0, rel=1e-10)

    def test_kl_moment_dominates_every_gamma(self):
        kl = kl_moment_exact(0.3, 25)
        assert kl >= max(moment_bound_exact(0.3, 25, g) for g in np.linspace(-5, 5, 21)) - 1e-10
        assert kl <= 2.0 * math.sqrt(25)

    def test_kl_moment_range(self):
        with pytest.raises(ValueError, match="mu must lie in"):
            kl_moment_exact(0.0, 10)

    def test_sampled_moments_not_flagged(self, world_20x10):
        h = _lossy_hypothesis(world_20x10)
        df = moment_bound_check(world_20x10[0], h, world_20x10[2], 20, [-2.0, -0.5, 0.5], 3000, stream(72, "m"))
        assert not df["flagged"].any()
        np.testing.assert_allclose(df["exact"], 1.0, rtol=1e-10)


class TestShiftOfMeasure:
    def test_random_triples(self, rng):
        for _ in range(50):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            f = rng.normal(0.0, 3.0, 5)
            assert shift_of_measure_check(p, q, f)

    def test_tight_at_log_ratio(self, rng):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        assert shift_of_measure_gap(p, q, np.log(q / p) + 1.7) == pytest.approx(0.0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="same length"):
            shift_of_measure_gap([0.5, 0.5], [1.0, 0.0], [0.0])


class TestGibbsOptimality:
    def test_no_perturbation_beats_gibbs(self, world_20x10, rng):
        world, space, loss = world_20x10
        l_hat = rng.random(len(space))
        assert gibbs_optimality_check(space, l_hat, 30, 2.0, loss.l_max, rng) >= -1e-12


class TestClosedForms:
    @pytest.mark.parametrize(
        "posterior",
        [GaussianShiftPosterior(np.array([0.5, -1.0, 2.0])), DropoutPosterior(0.4, np.array([1.0, 1.0, -2.0]))],
    )
    def test_kl_closed_form(self, posterior):
        value, est, se = kl_closed_form_check(posterior, 50_000, stream(73, "kl"))
        assert value == posterior.kl()
        assert within_se(value, est, se)

    def test_kl_closed_form_rejects_other_types(self, rng):
        with pytest.raises(TypeError, match="No closed-form KL"):
            kl_closed_form_check(np.ones(3), 10, rng)

    def test_binary_closed_form(self):
        data = separable_toy_dataset(25, stream(74, "toy"))
        closed, est, se = binary_closed_form_check(np.array([1.0, 0.5]), data, LinearBinaryModel(), 20_000, stream(75, "b"))
        assert within_se(closed, est, se)

    def test_within_se(self):
        assert within_se(1.0, 1.25, 0.1)
        assert not within_se(1.0, 1.35, 0.1)
        assert within_se(0.5, 0.5, 0.0)
        assert within_se(1.0, 1.35, 0.1, k=4.0)
