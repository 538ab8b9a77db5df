"""Brute-force numerical oracles for the lemmas behind the bounds.

These checks sit under the bound calculators: the relative Chernoff step,
the exponential moment bound, the shift-of-measure lemma, optimality of the
Gibbs posterior and the closed-form KL / loss expressions of the continuous
posteriors.  Tabular checks return pandas DataFrames with a ``flagged``
column; scalar checks return booleans or (value, estimate, SE) tuples.

Losses are divided by l_max so every check works with [0, 1] variables.
"""

import logging
import math

import numpy as np
import pandas as pd
from scipy import special, stats

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import relative_chernoff_ceiling
from pacbayes_toolkit.divergence import bernoulli_kl, d_gamma
from pacbayes_toolkit.hypothesis_spaces import BoundedLoss, FiniteHypothesisSpace, FiniteWorld
from pacbayes_toolkit.models import binary_empirical_stochastic_loss, mc_posterior_loss
from pacbayes_toolkit.posteriors import (
    DropoutPosterior,
    GaussianShiftPosterior,
    dropout_kl_mc,
    gaussian_kl_mc,
    gibbs_from_losses,
    posterior_objective,
)
from pacbayes_toolkit.worlds import draw_indices

logger = logging.getLogger(__name__)


def _normalised_row(world: FiniteWorld, h: int, loss: BoundedLoss) -> np.ndarray:
    table = loss.clipped_table(h + 1, world.n_situations)
    return table[h] / loss.l_max


def _sample_means(row: np.ndarray, world: FiniteWorld, n: int, m_trials: int, rng) -> np.ndarray:
    return row[draw_indices(world, n, m_trials, rng)].mean(axis=1)


# ── Relative Chernoff ────────────────────────────────────────────────────

def chernoff_check(
    world: FiniteWorld, h: int, loss: BoundedLoss, n: int, epsilon_grid, m_trials: int, rng
) -> pd.DataFrame:
    """Frequency of {L̂ ≤ L − ε} per ε against e^{−Nε²/(2L)}.

    A row is flagged when the frequency exceeds the ceiling by more than
    ``CHERNOFF_FLAG_SE`` binomial standard errors.
    """
    row = _normalised_row(world, h, loss)
    mu = float(row @ world.probs)
    if not mu > 0:
        raise ValueError(f"hypothesis {h} has zero true loss; the relative Chernoff ceiling is degenerate")
    means = _sample_means(row, world, n, m_trials, rng)

    records = []
    for eps in epsilon_grid:
        freq = float(np.mean(means <= mu - eps))
        ceiling = relative_chernoff_ceiling(mu, n, float(eps))
        se = math.sqrt(ceiling * (1.0 - ceiling) / m_trials)
        records.append({
            "epsilon": float(eps),
            "frequency": freq,
            "ceiling": ceiling,
            "binomial_se": se,
            "flagged": freq > ceiling + cfg.CHERNOFF_FLAG_SE * se,
        })
    df = pd.DataFrame(records)
    if df["flagged"].any():
        logger.warning(f"Chernoff check flagged {int(df['flagged'].sum())} of {len(df)} epsilon values")
    return df


# ── Exponential moment of D_γ ────────────────────────────────────────────

def moment_bound_exact(mu: float, n: int, gamma: float) -> float:
    """E[e^{N·D_γ(μ̂, μ)}] for Bernoulli(μ) losses, by binomial enumeration."""
    k = np.arange(n + 1)
    pmf = stats.binom.pmf(k, n, mu)
    return float(np.sum(pmf * np.exp(n * d_gamma(k / n, mu, gamma))))


def kl_moment_exact(mu: float, n: int) -> float:
    """E[e^{N·kl(μ̂, μ)}] for Bernoulli(μ) losses; at least sup_γ of the moments above."""
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    k = np.arange(n + 1)
    pmf = stats.binom.pmf(k, n, mu)
    return float(np.sum(pmf * np.exp(n * bernoulli_kl(k / n, np.full(k.shape, mu)))))


def moment_bound_check(
    world: FiniteWorld, h: int, loss: BoundedLoss, n: int, gamma_grid, m_trials: int, rng
) -> pd.DataFrame:
    """MC estimate of E[e^{N·D_γ(μ̂, μ)}] per γ; flagged when estimate − 3·SE > 1.

    When the loss row only takes the values 0 and l_max the exact binomial
    value is reported too.
    """
    row = _normalised_row(world, h, loss)
    mu = float(row @ world.probs)
    means = _sample_means(row, world, n, m_trials, rng)
    bernoulli = bool(np.all((row == 0) | (row == 1)))

    records = []
    for gamma in gamma_grid:
        values = np.exp(n * d_gamma(means, mu, float(gamma)))
        est = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(m_trials)) if m_trials > 1 else 0.0
        records.append({
            "gamma": float(gamma),
            "estimate": est,
            "std_error": se,
            "exact": moment_bound_exact(mu, n, float(gamma)) if bernoulli else np.nan,
            "flagged": est - cfg.SE_MULTIPLIER * se > 1.0,
        })
    return pd.DataFrame(records)


# ── Shift of measure ─────────────────────────────────────────────────────

def shift_of_measure_gap(p, q, f) -> float:
    """𝓓(Q,P) + ln E_P[e^f] − E_Q[f]; non-negative, zero at f = ln(q/p) + c."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    f = np.asarray(f, dtype=float)
    if not (p.shape == q.shape == f.shape):
        raise ValueError("p, q and f must have the same length")
    kl = float(np.sum(special.rel_entr(q, p)))
    e_q_f = float(np.sum(q * np.where(q > 0, f, 0.0)))
    log_mgf = float(special.logsumexp(f, b=p))
    return kl + log_mgf - e_q_f


def shift_of_measure_check(p, q, f, tolerance: float = 1e-12) -> bool:
    """E_Q[f] ≤ 𝓓(Q,P) + ln E_P[e^f] within ``tolerance``."""
    return shift_of_measure_gap(p, q, f) >= -tolerance


# ── Gibbs optimality ─────────────────────────────────────────────────────

def gibbs_optimality_check(
    space: FiniteHypothesisSpace,
    l_hat: np.ndarray,
    n: int,
    lambda_: float,
    l_max: float,
    rng: np.random.Generator,
    n_perturb: int = 1000,
) -> float:
    """Smallest objective(Q') − objective(Q_λ) over a perturbation cloud.

    Half the cloud is Dirichlet(1, …, 1); the rest mixes Q_λ with a
    Dirichlet draw at a random weight, probing the neighbourhood of the
    optimum.  A negative result beyond rounding means Q_λ is not optimal.
    """
    q_star = gibbs_from_losses(space, l_hat, n, lambda_, l_max).weights
    best = posterior_objective(q_star, space, l_hat, n, lambda_, l_max)
    k = len(space)
    cloud = rng.dirichlet(np.ones(k), size=n_perturb)
    local = n_perturb // 2
    t = rng.random(local)[:, None] ** 3
    cloud[:local] = (1.0 - t) * q_star + t * cloud[:local]
    cloud /= cloud.sum(axis=1, keepdims=True)
    slacks = [posterior_objective(qp, space, l_hat, n, lambda_, l_max) - best for qp in cloud]
    return float(min(slacks))


# ── Continuous posteriors ────────────────────────────────────────────────

def kl_closed_form_check(posterior, n_draws: int, rng) -> tuple[float, float, float]:
    """(closed-form KL, MC log-ratio estimate, SE) for a Gaussian or dropout posterior."""
    if isinstance(posterior, DropoutPosterior):
        est, se = dropout_kl_mc(posterior, n_draws, rng)
    elif isinstance(posterior, GaussianShiftPosterior):
        est, se = gaussian_kl_mc(posterior.theta, n_draws, rng)
    else:
        raise TypeError(f"No closed-form KL for {type(posterior).__name__}")
    return posterior.kl(), est, se


def binary_closed_form_check(theta, data, model, n_mc: int, rng) -> tuple[float, float, float]:
    """(closed-form stochastic 0-1 loss, MC estimate over ω ~ Q_Θ, SE)."""
    closed = binary_empirical_stochastic_loss(theta, data, model)
    est, se = mc_posterior_loss(GaussianShiftPosterior(theta), data, model, n_mc, rng)
    return closed, est, se


def within_se(value: float, estimate: float, se: float, k: float | None = None) -> bool:
    """|value − estimate| ≤ k·SE (k defaults to ``SE_MULTIPLIER``); exact match when SE = 0."""
    k = cfg.SE_MULTIPLIER if k is None else k
    return abs(value - estimate) <= k * se + 1e-12
