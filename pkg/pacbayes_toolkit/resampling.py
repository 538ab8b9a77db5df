"""Resampling estimators for the expectation-form statements.

Covers the mean posterior Q̄_A, the Langford decomposition of E_S KL, the
training-variance bounds and the Catoni chain built on the idealised Gibbs
posterior Q̈_λ (true losses in place of empirical ones).

An *algorithm* is any callable ``SampleSet -> weight vector`` over a fixed
finite hypothesis space, e.g. ``posteriors.gibbs_algorithm(space, loss, λ)``.

Expectation inequalities are checked on per-sample differences: the mean
difference must be at most ``SE_MULTIPLIER`` standard errors above zero.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import (
    BoundReport,
    catoni_expected_bound,
    train_var_bound,
    train_var_prior_bound,
)
from pacbayes_toolkit.hypothesis_spaces import (
    BoundedLoss,
    FiniteHypothesisSpace,
    FiniteWorld,
    SampleSet,
    empirical_losses,
    loss_table,
    true_losses,
)
from pacbayes_toolkit.posteriors import gibbs_from_losses, kl_discrete, log_partition
from pacbayes_toolkit.validity import TrialParams, ValidityReport, run_validity_experiment
from pacbayes_toolkit.worlds import draw_indices, enumerate_samples

logger = logging.getLogger(__name__)

Algorithm = Callable[[SampleSet], np.ndarray]


class IdentityCheckError(AssertionError):
    """An exact identity failed its tolerance."""


def fixed_algorithm(weights) -> Algorithm:
    """An algorithm that ignores its sample."""
    w = np.asarray(weights, dtype=float)

    def algorithm(sample: SampleSet) -> np.ndarray:
        return w

    return algorithm


def _draw_samples(world: FiniteWorld, n: int, m: int, rng) -> list[SampleSet]:
    return [SampleSet(tuple(int(s) for s in row)) for row in draw_indices(world, n, m, rng)]


@dataclass
class ExpectationCheck:
    """Mean and SE of a per-sample difference that should be ≤ 0 in expectation."""

    name: str
    mean: float
    std_error: float

    @property
    def holds(self) -> bool:
        return self.mean <= cfg.SE_MULTIPLIER * self.std_error + 1e-12

    @classmethod
    def from_differences(cls, name: str, diffs: np.ndarray) -> "ExpectationCheck":
        se = float(diffs.std(ddof=1) / math.sqrt(diffs.size)) if diffs.size > 1 else 0.0
        return cls(name, float(diffs.mean()), se)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "std_error": self.std_error, "holds": self.holds}


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return float(values.mean()), se


# ── Mean posterior ───────────────────────────────────────────────────────

def estimate_mean_posterior(
    algorithm: Algorithm,
    world: FiniteWorld,
    n: int,
    m_resamples: int,
    rng,
    *,
    mode: str = "mc",
    with_std_error: bool = False,
):
    """Q̄_A(h) = E_S[Q_A(S)(h)].

    ``mode="mc"`` averages over ``m_resamples`` fresh samples; ``"exact"``
    weights every ordered sample by its probability (|S|^N within budget).
    With ``with_std_error`` a componentwise SE vector is returned as well
    (zeros in exact mode).
    """
    if mode == "exact":
        total = None
        for sample, prob in enumerate_samples(world, n):
            q = prob * np.asarray(algorithm(sample), dtype=float)
            total = q if total is None else total + q
        mean = total / total.sum()
        return (mean, np.zeros_like(mean)) if with_std_error else mean
    if mode != "mc":
        raise KeyError(f"No estimation mode named '{mode}'")
    if m_resamples < 1:
        raise ValueError(f"m_resamples must be >= 1, got {m_resamples}")

    stacked = np.array([algorithm(s) for s in _draw_samples(world, n, m_resamples, rng)], dtype=float)
    mean = stacked.mean(axis=0)
    mean = mean / mean.sum()
    if not with_std_error:
        return mean
    se = stacked.std(axis=0, ddof=1) / math.sqrt(m_resamples) if m_resamples > 1 else np.zeros_like(mean)
    return mean, se


# ── Langford decomposition ───────────────────────────────────────────────

@dataclass
class LangfordResult:
    lhs: float  # E_S 𝓓(Q_A(S), P)
    variance_term: float  # E_S 𝓓(Q_A(S), Q̄_A)
    prior_term: float  # 𝓓(Q̄_A, P)

    @property
    def rhs(self) -> float:
        return self.variance_term + self.prior_term

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs


def langford_decomposition_check(
    algorithm: Algorithm,
    world: FiniteWorld,
    n: int,
    prior,
    mode: str = "exact",
    *,
    strict: bool = True,
) -> LangfordResult:
    """E_S 𝓓(Q_A(S), P) = E_S 𝓓(Q_A(S), Q̄_A) + 𝓓(Q̄_A, P) by exhaustive enumeration."""
    if mode != "exact":
        raise ValueError("the decomposition is an exact identity; only mode='exact' is supported")
    prior = np.asarray(prior, dtype=float)
    outputs = [(prob, np.asarray(algorithm(sample), dtype=float)) for sample, prob in enumerate_samples(world, n)]
    mean = sum(prob * q for prob, q in outputs)
    mean = mean / mean.sum()

    result = LangfordResult(
        lhs=math.fsum(prob * kl_discrete(q, prior) for prob, q in outputs),
        variance_term=math.fsum(prob * kl_discrete(q, mean) for prob, q in outputs),
        prior_term=kl_discrete(mean, prior),
    )
    if strict and not abs(result.gap) <= cfg.IDENTITY_TOLERANCE * max(1.0, abs(result.lhs)):
        raise IdentityCheckError(
            f"Langford decomposition off by {result.gap:.3e} (lhs {result.lhs:.15g}, rhs {result.rhs:.15g})"
        )
    return result


# ── Training-variance bounds ─────────────────────────────────────────────

@dataclass
class TrainVarReport:
    lambda_: float
    n: int
    m: int
    expected_true_loss: float
    expected_true_loss_se: float
    expected_empirical_loss: float
    expected_kl_to_mean: float
    expected_kl_to_prior: float
    dominance_gap: float  # 𝓓(Q̄_A, P)
    train_var: BoundReport
    train_var_prior: BoundReport
    checks: list[ExpectationCheck] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_,
            "n": self.n,
            "m": self.m,
            "expected_true_loss": self.expected_true_loss,
            "expected_true_loss_se": self.expected_true_loss_se,
            "expected_empirical_loss": self.expected_empirical_loss,
            "expected_kl_to_mean": self.expected_kl_to_mean,
            "expected_kl_to_prior": self.expected_kl_to_prior,
            "dominance_gap": self.dominance_gap,
            "train_var": self.train_var.to_dict(),
            "train_var_prior": self.train_var_prior.to_dict(),
            "checks": [c.to_dict() for c in self.checks],
            "holds": self.holds,
        }


def train_var_experiment(
    algorithm: Algorithm,
    world: FiniteWorld,
    space: FiniteHypothesisSpace,
    loss: BoundedLoss,
    lambda_: float,
    n: int,
    m_resamples: int,
    rng: np.random.Generator,
) -> TrainVarReport:
    """Check both training-variance bounds on resampling estimates.

    Pass 1 estimates Q̄_A; pass 2 measures KLs against it on fresh samples,
    so the estimate acts as a prior fixed before the pass-2 draws.
    """
    if not lambda_ > 0.5:
        raise ValueError(f"lambda must be > 1/2, got {lambda_}")
    table = loss_table(loss, space, world)
    true = true_losses(table, world)
    mean = estimate_mean_posterior(algorithm, world, n, m_resamples, rng)

    l_true, l_emp, kl_mean, kl_prior = [], [], [], []
    for sample in _draw_samples(world, n, m_resamples, rng):
        q = np.asarray(algorithm(sample), dtype=float)
        l_true.append(q @ true)
        l_emp.append(q @ empirical_losses(table, sample))
        kl_mean.append(kl_discrete(q, mean))
        kl_prior.append(kl_discrete(q, space.prior))
    l_true, l_emp, kl_mean, kl_prior = map(np.array, (l_true, l_emp, kl_mean, kl_prior))

    c = 1.0 / (1.0 - 1.0 / (2.0 * lambda_))
    rate = lambda_ * loss.l_max / n
    checks = [
        ExpectationCheck.from_differences("kl_to_mean", l_true - c * (l_emp + rate * kl_mean)),
        ExpectationCheck.from_differences("kl_to_prior", l_true - c * (l_emp + rate * kl_prior)),
    ]
    e_true, e_true_se = _mean_se(l_true)
    report = TrainVarReport(
        lambda_=float(lambda_),
        n=n,
        m=m_resamples,
        expected_true_loss=e_true,
        expected_true_loss_se=e_true_se,
        expected_empirical_loss=float(l_emp.mean()),
        expected_kl_to_mean=float(kl_mean.mean()),
        expected_kl_to_prior=float(kl_prior.mean()),
        dominance_gap=kl_discrete(mean, space.prior),
        train_var=train_var_bound(float(l_emp.mean()), float(kl_mean.mean()), n, loss.l_max, lambda_),
        train_var_prior=train_var_prior_bound(float(l_emp.mean()), float(kl_prior.mean()), n, loss.l_max, lambda_),
        checks=checks,
    )
    logger.info(
        f"Training-variance check at lambda={lambda_:g}: E L = {e_true:.4g}, "
        f"bounds {report.train_var.value:.4g} / {report.train_var_prior.value:.4g}"
    )
    return report


# ── Catoni chain ─────────────────────────────────────────────────────────

@dataclass
class CatoniChainReport:
    lambda_: float
    n: int
    m: int
    expected_true_loss: float
    expected_empirical_loss: float
    expected_kl_to_ideal: float
    expected_log_partition: float
    ideal_log_partition: float  # ln Z̈_λ
    catoni_expected: BoundReport
    checks: list[ExpectationCheck] = field(default_factory=list)
    validity: list[ValidityReport] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(c.holds for c in self.checks) and all(v.passed for v in self.validity if v.certified)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_,
            "n": self.n,
            "m": self.m,
            "expected_true_loss": self.expected_true_loss,
            "expected_empirical_loss": self.expected_empirical_loss,
            "expected_kl_to_ideal": self.expected_kl_to_ideal,
            "expected_log_partition": self.expected_log_partition,
            "ideal_log_partition": self.ideal_log_partition,
            "catoni_expected": self.catoni_expected.to_dict(),
            "checks": [c.to_dict() for c in self.checks],
            "validity": [v.to_dict() for v in self.validity],
            "holds": self.holds,
        }


def catoni_chain_experiment(
    world: FiniteWorld,
    space: FiniteHypothesisSpace,
    loss: BoundedLoss,
    lambda_: float,
    n: int,
    m_resamples: int,
    rng: np.random.Generator,
    *,
    delta: float = 0.05,
    m_trials: int | None = None,
    jobs: int | None = None,
) -> CatoniChainReport:
    """Resampling checks of the chain from Q̈_λ to the expected Catoni bound.

    Per sample: L(Q_λ(S)), L̂(Q_λ(S)), 𝓓(Q_λ(S), Q̈_λ) and ln Z_λ(S).  Checked
    on the averages:

    * the PAC-Bayes bound with Q̈_λ as prior at γ = λ/2,
    * E 𝓓(Q_λ(S), Q̈_λ) ≤ (N/(λ·l_max))·(E L − E L̂)  (log-partition convexity),
    * E L ≤ E L̂ / (1 − 2/λ).

    The high-confidence forms run as validity experiments (``catoni_hc`` and
    ``kl_gibbs_hc``) with ``m_trials`` trials (default ``m_resamples``).
    """
    if not lambda_ > 2:
        raise ValueError(f"lambda must be > 2, got {lambda_}")
    table = loss_table(loss, space, world)
    true = true_losses(table, world)
    l_max = loss.l_max
    ideal = gibbs_from_losses(space, true, n, lambda_, l_max).weights
    ideal_log_z = log_partition(space, true, n, lambda_, l_max)

    l_true, l_emp, kls, log_zs = [], [], [], []
    for sample in _draw_samples(world, n, m_resamples, rng):
        l_hat = empirical_losses(table, sample)
        q = gibbs_from_losses(space, l_hat, n, lambda_, l_max).weights
        l_true.append(q @ true)
        l_emp.append(q @ l_hat)
        kls.append(kl_discrete(q, ideal))
        log_zs.append(log_partition(space, l_hat, n, lambda_, l_max))
    l_true, l_emp, kls, log_zs = map(np.array, (l_true, l_emp, kls, log_zs))

    gamma = lambda_ / 2.0
    c_gamma = 1.0 / (1.0 - 1.0 / (2.0 * gamma))
    checks = [
        ExpectationCheck.from_differences(
            "ideal_prior_pac_bayes", l_true - c_gamma * (l_emp + (gamma * l_max / n) * kls)
        ),
        ExpectationCheck.from_differences("kl_to_ideal", kls - (n / (lambda_ * l_max)) * (l_true - l_emp)),
        ExpectationCheck.from_differences("catoni_expected", l_true - l_emp / (1.0 - 2.0 / lambda_)),
        ExpectationCheck.from_differences("log_partition_convexity", ideal_log_z - log_zs),
    ]

    trials = m_trials or m_resamples
    params = TrialParams(n=n, delta=delta, lambda_=lambda_)
    seed = int(rng.integers(0, 2**63))
    validity = [
        run_validity_experiment("catoni_hc", world, space, loss, params, trials, seed, jobs=jobs),
        run_validity_experiment("kl_gibbs_hc", world, space, loss, params, trials, seed, jobs=jobs),
    ]

    report = CatoniChainReport(
        lambda_=float(lambda_),
        n=n,
        m=m_resamples,
        expected_true_loss=float(l_true.mean()),
        expected_empirical_loss=float(l_emp.mean()),
        expected_kl_to_ideal=float(kls.mean()),
        expected_log_partition=float(log_zs.mean()),
        ideal_log_partition=ideal_log_z,
        catoni_expected=catoni_expected_bound(float(l_emp.mean()), lambda_, n=n, l_max=l_max),
        checks=checks,
        validity=validity,
    )
    failed = [c.name for c in checks if not c.holds]
    if failed:
        logger.warning(f"Catoni chain at lambda={lambda_:g}: checks failed: {', '.join(failed)}")
    else:
        logger.info(f"Catoni chain at lambda={lambda_:g}: all expectation checks hold over {m_resamples} samples")
    return report
