"""Scalar divergence kernels and the bound-inversion lemma.

Everything here is a pure function of its arguments.  Kernels accept Python
floats or NumPy arrays and broadcast, so sweeps over (q, p) grids stay
vectorised.

Argument order is empirical rate first: ``D_γ(q, p) = qγ − ln(1 − p + p·e^γ)``
with q the empirical rate and p the true rate.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from pacbayes_toolkit import config as cfg

logger = logging.getLogger(__name__)

ArrayLike = float | np.ndarray


@dataclass(frozen=True)
class ProbPair:
    q: float  # empirical-rate role
    p: float  # true-rate role

    def __post_init__(self):
        for name, value in (("q", self.q), ("p", self.p)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def kl(self) -> float:
        return float(bernoulli_kl(self.q, self.p))

    def d_gamma(self, gamma: float) -> float:
        return float(d_gamma(self.q, self.p, gamma))


@dataclass(frozen=True)
class LambdaParam:
    lambda_: float

    def __post_init__(self):
        if not self.lambda_ > 0.5:
            raise ValueError(f"lambda must be > 1/2, got {self.lambda_}")

    @property
    def gamma(self) -> float:
        """γ = −1/λ, always in (−2, 0)."""
        return -1.0 / self.lambda_


def _as_lambda(lam: "LambdaParam | float") -> LambdaParam:
    return lam if isinstance(lam, LambdaParam) else LambdaParam(float(lam))


def _check_unit(name: str, value: ArrayLike) -> None:
    arr = np.asarray(value, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} must lie in [0, 1]")


def _scalarise(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


# ── Bernoulli divergences ────────────────────────────────────────────────

def bernoulli_kl(q: ArrayLike, p: ArrayLike) -> ArrayLike:
    """KL from Bernoulli(q) to Bernoulli(p) in nats.

    0·ln 0 = 0 and q·ln(q/0) = +inf for q > 0.
    """
    _check_unit("q", q)
    _check_unit("p", p)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    return _scalarise(special.rel_entr(q, p) + special.rel_entr(1.0 - q, 1.0 - p))


def d_gamma(q: ArrayLike, p: ArrayLike, gamma: ArrayLike) -> ArrayLike:
    """D_γ(q, p) = γq − ln(1 − p + p·e^γ)."""
    _check_unit("q", q)
    _check_unit("p", p)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise ValueError("gamma must be finite")
    return _scalarise(gamma * q - np.log1p(p * np.expm1(gamma)))


def optimal_gamma(q: float, p: float) -> float:
    """γ maximising D_γ(q, p): ln(q(1−p) / (p(1−q))); ±inf at the edges."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.log(q) + np.log1p(-p) - np.log(p) - np.log1p(-q))


def sup_d_gamma(q: float, p: float, gamma_grid: np.ndarray | None = None) -> float:
    """Numeric sup over γ of D_γ(q, p) on a dense grid plus the analytic maximiser."""
    if gamma_grid is None:
        lo, hi, points = cfg.gamma_grid_spec()
        gamma_grid = np.linspace(lo, hi, points)
    best = float(np.max(d_gamma(q, p, gamma_grid)))
    g_star = optimal_gamma(q, p)
    if math.isfinite(g_star):
        best = max(best, float(d_gamma(q, p, g_star)))
    return best


# ── Bound inversion ──────────────────────────────────────────────────────

def invert_bound(q_hat: ArrayLike, c: ArrayLike, lam: "LambdaParam | float") -> ArrayLike:
    """Upper bound on any p with D_{−1/λ}(q_hat, p) ≤ c.

    Returns (q_hat + λc) / (1 − 1/(2λ)).
    """
    lam = _as_lambda(lam)
    c_arr = np.asarray(c, dtype=float)
    if np.any(c_arr < 0):
        raise ValueError("c must be non-negative")
    q_arr = np.asarray(q_hat, dtype=float)
    return _scalarise((q_arr + lam.lambda_ * c_arr) / (1.0 - 1.0 / (2.0 * lam.lambda_)))


# ── Normal tail ──────────────────────────────────────────────────────────

def std_normal_tail(m: ArrayLike) -> ArrayLike:
    """P(ε > m) for ε ~ N(0, 1), via SciPy's erfc-based ``ndtr``."""
    m = np.asarray(m, dtype=float)
    if np.any(np.isnan(m)):
        raise ValueError("m must not be NaN")
    return _scalarise(special.ndtr(-m))
