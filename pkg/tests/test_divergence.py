"""Tests for the Bernoulli divergence kernels and the inversion lemma."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacbayes_toolkit.divergence import (
    LambdaParam,
    ProbPair,
    bernoulli_kl,
    d_gamma,
    invert_bound,
    optimal_gamma,
    std_normal_tail,
    sup_d_gamma,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
interior = st.floats(0.01, 0.99, allow_nan=False)


class TestBernoulliKL:
    def test_equal_rates_is_zero(self):
        assert bernoulli_kl(0.3, 0.3) == 0.0

    def test_edges(self):
        assert bernoulli_kl(0.0, 0.0) == 0.0
        assert bernoulli_kl(1.0, 1.0) == 0.0
        assert bernoulli_kl(0.5, 0.0) == math.inf

    def test_known_value(self):
        expected = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert bernoulli_kl(0.5, 0.25) == pytest.approx(expected, rel=1e-14)

    def test_vectorised(self):
        out = bernoulli_kl(np.array([0.1, 0.5]), np.array([0.1, 0.5]))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="q must lie"):
            bernoulli_kl(1.2, 0.5)

    @given(unit, unit)
    def test_non_negative(self, q, p):
        assert bernoulli_kl(q, p) >= 0.0


class TestDGamma:
    def test_zero_gamma(self):
        assert d_gamma(0.4, 0.7, 0.0) == 0.0

    def test_known_value(self):
        expected = 0.5 * 1.0 - math.log(1 - 0.5 + 0.5 * math.e)
        assert d_gamma(0.5, 0.5, 1.0) == pytest.approx(expected, rel=1e-14)

    def test_rejects_infinite_gamma(self):
        with pytest.raises(ValueError, match="finite"):
            d_gamma(0.5, 0.5, math.inf)

    @given(interior, interior)
    @settings(max_examples=200)
    def test_sup_equals_kl(self, q, p):
        assert sup_d_gamma(q, p) == pytest.approx(bernoulli_kl(q, p), abs=1e-9)

    def test_sup_equals_kl_sweep(self):
        qs, ps = np.meshgrid(np.linspace(0.02, 0.98, 25), np.linspace(0.02, 0.98, 25))
        for q, p in zip(qs.ravel(), ps.ravel()):
            assert abs(sup_d_gamma(q, p) - bernoulli_kl(q, p)) <= 1e-9

    @given(interior, interior, st.floats(-20.0, 20.0))
    def test_kl_dominates_every_gamma(self, q, p, gamma):
        assert d_gamma(q, p, gamma) <= bernoulli_kl(q, p) + 1e-12

    def test_optimal_gamma_edges(self):
        assert optimal_gamma(0.0, 0.5) == -math.inf
        assert optimal_gamma(1.0, 0.5) == math.inf

    def test_prob_pair(self):
        pair = ProbPair(0.2, 0.6)
        assert pair.kl() == pytest.approx(bernoulli_kl(0.2, 0.6))
        assert pair.d_gamma(-1.0) == pytest.approx(d_gamma(0.2, 0.6, -1.0))
        with pytest.raises(ValueError):
            ProbPair(-0.1, 0.5)


class TestInvertBound:
    def test_lambda_one(self):
        assert invert_bound(0.2, 0.08, 1.0) == pytest.approx(2 * 0.28)

    def test_rejects_small_lambda(self):
        with pytest.raises(ValueError, match="lambda must be > 1/2"):
            LambdaParam(0.5)

    def test_rejects_negative_c(self):
        with pytest.raises(ValueError, match="non-negative"):
            invert_bound(0.1, -1.0, 2.0)

    def test_gamma_of_lambda(self):
        assert LambdaParam(2.0).gamma == -0.5

    @given(unit, st.floats(0.0, 2.0), st.floats(0.51, 50.0), unit)
    @settings(max_examples=500)
    def test_soundness(self, q_hat, c, lam, p):
        # any p with D_{-1/λ}(q_hat, p) ≤ c lies below the inverted bound
        if d_gamma(q_hat, p, -1.0 / lam) <= c:
            assert p <= invert_bound(q_hat, c, lam) + 1e-12

    def test_soundness_sweep(self, rng):
        q = rng.random(20_000)
        p = rng.random(20_000)
        lam = 0.5 + rng.exponential(3.0, 20_000) + 1e-6
        c = d_gamma(q, p, -1.0 / lam)
        ok = c >= 0
        bounds = (q[ok] + lam[ok] * c[ok]) / (1.0 - 1.0 / (2.0 * lam[ok]))
        assert np.all(p[ok] <= bounds + 1e-12)
        for qi, ci, li, bi in list(zip(q[ok], c[ok], lam[ok], bounds))[:200]:
            assert invert_bound(qi, ci, li) == pytest.approx(bi, rel=1e-14)


class TestNormalTail:
    def test_zero_margin_is_half(self):
        assert std_normal_tail(0.0) == 0.5

    def test_symmetry(self):
        m = np.linspace(-5, 5, 101)
        np.testing.assert_allclose(std_normal_tail(m) + std_normal_tail(-m), 1.0, atol=1e-15)

    def test_far_tail_positive(self):
        assert 0.0 < std_normal_tail(30.0) < 1e-190

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            std_normal_tail(float("nan"))
