"""Tests for SGD bound minimisation and the objective it follows."""

import math

import numpy as np
import pandas as pd
import pytest

from pacbayes_toolkit.bounds import BoundKind
from pacbayes_toolkit.hypothesis_spaces import SampleSet
from pacbayes_toolkit.models import (
    LinearBinaryModel,
    MulticlassModel,
    block_feature_map,
    mc_posterior_loss,
    separable_toy_dataset,
    signed_feature_map,
)
from pacbayes_toolkit.posteriors import GaussianShiftPosterior
from pacbayes_toolkit.rng import stream
from pacbayes_toolkit.training import (
    TrainConfig,
    TrainingDivergedError,
    TrainTrace,
    grid_search_objective,
    objective_estimate,
    objective_gradient,
    sgd_minimize_bound,
)


def _small(**overrides) -> TrainConfig:
    params = dict(steps=10, minibatch=8, mc_per_step=2, checkpoint_every=2, checkpoint_mc=16, final_mc=64, seed=3)
    params.update(overrides)
    return TrainConfig(**params)


@pytest.fixture
def toy():
    return separable_toy_dataset(40, stream(50, "toy"))


@pytest.fixture
def signed_model():
    return MulticlassModel(signed_feature_map, (-1, 1), beta=5.0)


# ── Config ───────────────────────────────────────────────────────────────

class TestTrainConfig:
    @pytest.mark.parametrize(
        "overrides, match",
        [
            ({"lambda_": 0.5}, "lambda"),
            ({"delta": 0.0}, "delta"),
            ({"alpha": 1.5}, "alpha"),
            ({"eta0": 0.0}, "eta0"),
            ({"kappa": 1.5}, "kappa"),
            ({"minibatch": 0}, "minibatch"),
            ({"steps": 0}, "steps"),
            ({"final_mc": 1}, "final_mc"),
        ],
    )
    def test_ranges(self, overrides, match):
        with pytest.raises(ValueError, match=match):
            TrainConfig(**overrides)

    def test_from_dict_fills_defaults(self):
        config = TrainConfig.from_dict({"lambda": 4.0, "steps": 7})
        assert config.lambda_ == 4.0
        assert config.steps == 7
        assert config.eta0 == 0.1
        assert config.kappa == 0.5

    def test_unknown_option(self):
        with pytest.raises(KeyError, match="No training option named 'momentum'"):
            TrainConfig.from_dict({"momentum": 0.9})

    def test_to_dict_uses_lambda_key(self):
        d = TrainConfig(lambda_=2.0).to_dict()
        assert d["lambda"] == 2.0
        assert "lambda_" not in d
        assert TrainConfig.from_dict(d) == TrainConfig(lambda_=2.0)

    def test_scale(self):
        assert TrainConfig(lambda_=1.0).scale == 2.0
        assert TrainConfig(lambda_=2.0).scale == pytest.approx(4.0 / 3.0, rel=1e-15)


# ── Objective ────────────────────────────────────────────────────────────

class TestObjective:
    def test_prior_mean_with_unit_delta(self, toy, signed_model):
        config = TrainConfig(lambda_=2.0, delta=1.0)
        value = objective_estimate(np.zeros(2), toy, signed_model, config, 500, stream(1, "o"))
        loss, _ = mc_posterior_loss(GaussianShiftPosterior(np.zeros(2)), toy, signed_model, 500, stream(1, "o"))
        assert value == pytest.approx(config.scale * loss, rel=1e-12)

    def test_manual_recombination(self, toy, signed_model):
        config = TrainConfig(lambda_=3.0, delta=0.05)
        theta = np.array([1.0, -0.5])
        value = objective_estimate(theta, toy, signed_model, config, 300, stream(2, "o"))
        loss, _ = mc_posterior_loss(GaussianShiftPosterior(theta), toy, signed_model, 300, stream(2, "o"))
        expected = config.scale * (loss + (3.0 / 40) * (0.5 * 1.25 + math.log(20.0)))
        assert value == pytest.approx(expected, rel=1e-12)

    def test_full_dropout_keeps_only_confidence_term(self, toy, signed_model):
        config = TrainConfig(lambda_=1.0, alpha=1.0)
        value = objective_estimate(np.array([4.0, 4.0]), toy, signed_model, config, 50, stream(3, "o"))
        assert value == pytest.approx(2.0 * (0.5 + (1.0 / 40) * math.log(20.0)), rel=1e-12)

    def test_binary_closed_form_is_deterministic(self, toy):
        config = TrainConfig(lambda_=1.0)
        a = objective_estimate(np.array([1.0, 0.2]), toy, LinearBinaryModel(), config, 2, stream(4, "a"))
        b = objective_estimate(np.array([1.0, 0.2]), toy, LinearBinaryModel(), config, 2, stream(4, "b"))
        assert a == b

    def test_binary_rejects_dropout(self, toy):
        with pytest.raises(ValueError, match="Gaussian posterior only"):
            objective_estimate(np.zeros(2), toy, LinearBinaryModel(), TrainConfig(alpha=0.5), 2, stream(5, "o"))

    @pytest.mark.parametrize("alpha", [None, 0.4])
    def test_gradient_matches_finite_differences(self, alpha):
        rng = stream(51, "fd_data")
        xs = rng.standard_normal((10, 2))
        data = SampleSet(tuple((x, int(y)) for x, y in zip(xs, rng.integers(0, 3, 10))))
        model = MulticlassModel(block_feature_map((0, 1, 2)), (0, 1, 2), 4.0)
        config = TrainConfig(lambda_=2.0, alpha=alpha)
        theta = np.array([0.8, -0.4, 1.1, 0.2, -0.9, 0.5])
        grad = objective_gradient(theta, data, model, config, 256, stream(52, "crn"))
        h = 1e-4
        fd = np.zeros(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            up = objective_estimate(theta + e, data, model, config, 256, stream(52, "crn"))
            down = objective_estimate(theta - e, data, model, config, 256, stream(52, "crn"))
            fd[i] = (up - down) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-3 * np.linalg.norm(grad)

    def test_binary_gradient_matches_finite_differences(self, toy):
        config = TrainConfig(lambda_=1.5)
        theta, h = np.array([0.7, -0.3]), 1e-6
        grad = objective_gradient(theta, toy, LinearBinaryModel(), config, 1, stream(6, "g"))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            up = objective_estimate(theta + e, toy, LinearBinaryModel(), config, 2, stream(6, "g"))
            down = objective_estimate(theta - e, toy, LinearBinaryModel(), config, 2, stream(6, "g"))
            assert grad[i] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-9)


# ── SGD ──────────────────────────────────────────────────────────────────

class TestSGD:
    def test_regulariser_alone_shrinks_theta(self, toy):
        model = MulticlassModel(signed_feature_map, (-1, 1), 5.0, lambda yp, y: 0.5)
        config = _small(theta0=[3.0, -2.0], eta0=0.5, steps=20)
        theta, trace, _ = sgd_minimize_bound(toy, model, config)
        assert np.linalg.norm(theta) < math.hypot(3.0, -2.0)
        norms = [r.theta_norm for r in trace.records]
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_same_seed_same_trace(self, toy, signed_model):
        config = _small()
        theta_a, trace_a, report_a = sgd_minimize_bound(toy, signed_model, config)
        theta_b, trace_b, report_b = sgd_minimize_bound(toy, signed_model, config)
        np.testing.assert_array_equal(theta_a, theta_b)
        pd.testing.assert_frame_equal(trace_a.to_frame(), trace_b.to_frame())
        assert report_a == report_b

    def test_trace_checkpoints(self, toy, signed_model):
        _, trace, _ = sgd_minimize_bound(toy, signed_model, _small(steps=9, checkpoint_every=4))
        assert [r.step for r in trace.records] == [0, 4, 8, 9]
        assert trace.records[0].theta_norm == 0.0

    def test_report_is_certified_l2_bound(self, toy, signed_model):
        theta, _, report = sgd_minimize_bound(toy, signed_model, _small(final_mc=4000))
        assert report.kind == BoundKind.L2
        assert report.n == 40
        assert report.mc_std_error > 0
        again = objective_estimate(theta, toy, signed_model, _small(), 4000, stream(9, "independent"))
        assert abs(again - report.value) <= 4 * math.sqrt(2.0) * report.mc_std_error

    def test_dropout_reports_dropout_bound(self, toy, signed_model):
        _, _, report = sgd_minimize_bound(toy, signed_model, _small(alpha=0.5))
        assert report.kind == BoundKind.DROPOUT

    def test_binary_descent_is_monotone(self, toy):
        config = _small(steps=200, minibatch=40, eta0=0.5, kappa=0.0, checkpoint_every=20)
        _, trace, report = sgd_minimize_bound(toy, LinearBinaryModel(), config)
        bounds = [r.bound for r in trace.records]
        assert all(b <= a + 1e-12 for a, b in zip(bounds, bounds[1:]))
        assert report.mc_std_error == 0.0
        assert report.value == pytest.approx(bounds[-1], rel=1e-12)

    def test_binary_reaches_grid_optimum(self, toy):
        config = _small(steps=2000, minibatch=40, eta0=1.0, kappa=0.0, checkpoint_every=500)
        theta, _, report = sgd_minimize_bound(toy, LinearBinaryModel(), config)
        _, best, _ = grid_search_objective(toy, LinearBinaryModel(), config, np.linspace(-4, 4, 41), 2, 0)
        assert report.value <= best + 1e-6

    def test_theta0_dimension_checked(self, toy, signed_model):
        with pytest.raises(ValueError, match="theta0 must have dimension 2"):
            sgd_minimize_bound(toy, signed_model, _small(theta0=[1.0, 2.0, 3.0]))

    def test_divergence_is_structured(self, toy):
        config = _small(steps=500, minibatch=40, eta0=1e6, kappa=0.0, checkpoint_every=1000)
        with pytest.raises(TrainingDivergedError) as excinfo:
            sgd_minimize_bound(toy, LinearBinaryModel(), config)
        failure = excinfo.value.to_dict()
        assert failure["type"] == "TrainingDivergedError"
        assert 1 <= failure["step"] <= 500
        assert failure["theta_norm"] is None

    def test_grid_search_needs_two_dimensions(self):
        data = SampleSet(((np.array([1.0, 0.0]), 0),))
        model = MulticlassModel(block_feature_map((0, 1)), (0, 1), 1.0)
        with pytest.raises(ValueError, match="d = 2"):
            grid_search_objective(data, model, TrainConfig(), np.linspace(-1, 1, 3), 4, 0)

    @pytest.mark.slow
    def test_toy_training_improves_objective(self, toy, signed_model):
        config = TrainConfig(lambda_=1.0, steps=1000, seed=11)
        _, trace, _ = sgd_minimize_bound(toy, signed_model, config)
        smoothed = trace.smoothed_objective(10)
        first, last = trace.records[0], trace.records[-1]
        assert smoothed[-1] <= smoothed[0] + 3 * (first.objective_se + last.objective_se)

    @pytest.mark.slow
    def test_toy_training_matches_grid_optimum(self, toy, signed_model):
        config = TrainConfig(lambda_=1.0, steps=1000, seed=11)
        _, _, report = sgd_minimize_bound(toy, signed_model, config)
        _, best, best_se = grid_search_objective(toy, signed_model, config, np.linspace(-6, 6, 200), 64, 0)
        assert report.value <= best + 3 * (report.mc_std_error + best_se)
        assert report.value < report.l_max


class TestTrainTrace:
    def test_frame_round_trip(self, toy, signed_model):
        _, trace, _ = sgd_minimize_bound(toy, signed_model, _small())
        df = trace.to_frame()
        assert list(df.columns) == ["step", "objective", "objective_se", "bound", "theta_norm"]
        assert TrainTrace.from_frame(df) == trace

    def test_smoothing_window(self):
        trace = TrainTrace.from_frame(pd.DataFrame({
            "step": [0, 1, 2], "objective": [3.0, 1.0, 2.0],
            "objective_se": [0.0] * 3, "bound": [0.0] * 3, "theta_norm": [0.0] * 3,
        }))
        np.testing.assert_allclose(trace.smoothed_objective(2), [3.0, 2.0, 1.5])
