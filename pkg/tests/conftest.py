"""Shared fixtures: small random worlds and registry isolation."""

import numpy as np
import pytest

from pacbayes_toolkit.bounds import _BOUND_CALCULATORS
from pacbayes_toolkit.hypothesis_spaces import BoundedLoss, FiniteHypothesisSpace, FiniteWorld
from pacbayes_toolkit.rng import stream
from pacbayes_toolkit.validity import _VALIDITY_TRIALS
from pacbayes_toolkit.worlds import random_world


@pytest.fixture
def rng():
    return stream(20240601, "tests")


@pytest.fixture
def world_20x10():
    """The 20-hypothesis, 10-situation desk world of the validity runs."""
    return random_world(stream(7, "world"), 20, 10, seed=7)


@pytest.fixture
def tiny_world():
    """3 hypotheses over 3 situations; small enough for exact enumeration."""
    world = FiniteWorld((0, 1, 2), np.array([0.5, 0.3, 0.2]))
    space = FiniteHypothesisSpace((0, 1, 2), np.array([0.5, 0.25, 0.25]))
    loss = BoundedLoss.from_table([[0.0, 1.0, 0.0], [1.0, 0.0, 0.5], [0.2, 0.2, 0.2]], 1.0)
    return world, space, loss


@pytest.fixture
def clean_bound_registry():
    saved = _BOUND_CALCULATORS.copy()
    yield
    _BOUND_CALCULATORS.clear()
    _BOUND_CALCULATORS.extend(saved)


@pytest.fixture
def clean_trial_registry():
    saved = _VALIDITY_TRIALS.copy()
    yield
    _VALIDITY_TRIALS.clear()
    _VALIDITY_TRIALS.extend(saved)
