"""Generalisation-bound calculators producing decomposed ``BoundReport``s.

Every calculator is a pure formula evaluator.  Statistical validity
conditions (λ and α fixed before the sample is drawn, σ̂²(h) = 0 for the
zero-variance form) are caller contracts; the simulation modules re-check
them empirically.

Calculators register themselves by kind so the CLI and ``local/`` extensions
can dispatch by name::

    @bound_calculator("my_bound")
    def my_bound(l_hat, n, delta, l_max) -> BoundReport: ...
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy import optimize

from pacbayes_toolkit import config as cfg

logger = logging.getLogger(__name__)


class BoundKind(str, Enum):
    OCCAM = "occam"
    PAC_BAYES = "pac_bayes"
    PAC_BAYES_GRID = "pac_bayes_grid"
    L2 = "l2"
    DROPOUT = "dropout"
    TRAIN_VAR = "train_var"
    TRAIN_VAR_PRIOR = "train_var_prior"
    LOCAL_HC = "local_hc"
    CATONI_EXPECTED = "catoni_expected"
    CATONI_HC = "catoni_hc"
    BERNSTEIN = "bernstein"
    BERNSTEIN_UNION = "bernstein_union"
    ZERO_VARIANCE = "zero_variance"


# Kinds whose value is (emp + λ·l_max·C/n) / (1 − 1/(2λ))
_LAMBDA_FORM_KINDS = {
    BoundKind.OCCAM,
    BoundKind.PAC_BAYES,
    BoundKind.PAC_BAYES_GRID,
    BoundKind.L2,
    BoundKind.DROPOUT,
    BoundKind.TRAIN_VAR,
    BoundKind.TRAIN_VAR_PRIOR,
    BoundKind.LOCAL_HC,
}

CSV_COLUMNS = [
    "kind",
    "value",
    "empirical_term",
    "complexity_nats",
    "lambda",
    "delta",
    "n",
    "l_max",
    "vacuous",
]


@dataclass
class BoundReport:
    """A bound value with the terms it was assembled from.

    ``complexity_nats`` already includes the confidence term (ln(1/δ),
    ln(k/δ), ln(2/δ) or ln(3/δ) depending on the kind).
    """

    kind: BoundKind
    value: float
    empirical_term: float
    complexity_nats: float
    lambda_: float | None
    delta: float
    n: int | None
    l_max: float
    estimated_prior: bool = False
    variance: float | None = None
    mc_std_error: float | None = None

    @property
    def vacuous(self) -> bool:
        return self.value > self.l_max

    def recombine(self) -> float:
        """Recompute ``value`` from the recorded terms."""
        kind = BoundKind(self.kind)
        if kind in _LAMBDA_FORM_KINDS:
            return _lambda_form(self.empirical_term, self.complexity_nats, self.lambda_, self.n, self.l_max)
        if kind == BoundKind.CATONI_EXPECTED:
            return self.empirical_term / (1.0 - 2.0 / self.lambda_)
        if kind == BoundKind.CATONI_HC:
            return _catoni_hc_form(
                self.empirical_term, self.complexity_nats, self.lambda_, self.n, self.l_max
            )
        if kind in (BoundKind.BERNSTEIN, BoundKind.BERNSTEIN_UNION):
            return _bernstein_form(self.empirical_term, self.variance, self.complexity_nats, self.n, self.l_max)
        if kind == BoundKind.ZERO_VARIANCE:
            return self.empirical_term + self.l_max * self.complexity_nats / (self.n - 1)
        raise KeyError(f"No recombination rule for bound kind '{kind.value}'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = BoundKind(self.kind).value
        d["lambda"] = d.pop("lambda_")
        d["vacuous"] = self.vacuous
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        d = dict(d)
        d.pop("vacuous", None)
        d["lambda_"] = d.pop("lambda", None)
        d["kind"] = BoundKind(d["kind"])
        return cls(**d)

    def to_row(self) -> dict:
        """Flat row in ``CSV_COLUMNS`` order."""
        d = self.to_dict()
        return {col: d[col] for col in CSV_COLUMNS}


# ── Bound calculator registry ────────────────────────────────────────────

BoundFn = Callable[..., BoundReport]

# Registry: list of (name, calculator, enabled).
_BOUND_CALCULATORS: list[tuple[str, BoundFn, bool]] = []


def register_bound(name: str, fn: BoundFn, *, enabled: bool = True) -> None:
    """Register a bound calculator under ``name``.

    Re-registering a name replaces the previous calculator.
    """
    for i, (n, _, _) in enumerate(_BOUND_CALCULATORS):
        if n == name:
            _BOUND_CALCULATORS[i] = (name, fn, enabled)
            logger.debug(f"Replaced bound calculator: {name} (enabled={enabled})")
            return
    _BOUND_CALCULATORS.append((name, fn, enabled))
    logger.debug(f"Registered bound calculator: {name} (enabled={enabled})")


def bound_calculator(name: str, *, enabled: bool = True):
    """Decorator registering a function as the calculator for ``name``."""
    def decorator(fn):
        register_bound(name, fn, enabled=enabled)
        return fn
    return decorator


def list_bounds() -> list[tuple[str, bool]]:
    """Return registered calculator names and their enabled status."""
    return [(name, enabled) for name, _, enabled in _BOUND_CALCULATORS]


def enable_bound(name: str) -> None:
    for i, (n, fn, _) in enumerate(_BOUND_CALCULATORS):
        if n == name:
            _BOUND_CALCULATORS[i] = (n, fn, True)
            return
    raise KeyError(f"No bound calculator named '{name}'")


def disable_bound(name: str) -> None:
    """Disable a registered calculator by name (keeps it in the registry)."""
    for i, (n, fn, _) in enumerate(_BOUND_CALCULATORS):
        if n == name:
            _BOUND_CALCULATORS[i] = (n, fn, False)
            return
    raise KeyError(f"No bound calculator named '{name}'")


def get_bound_calculator(name: str) -> BoundFn:
    for n, fn, enabled in _BOUND_CALCULATORS:
        if n == name:
            if not enabled:
                raise KeyError(f"Bound calculator '{name}' is disabled")
            return fn
    raise KeyError(f"No bound calculator named '{name}'")


def compute_bound(name: str, **params) -> BoundReport:
    """Dispatch to the registered calculator ``name`` with keyword params."""
    return get_bound_calculator(name)(**params)


# ── Validation helpers ───────────────────────────────────────────────────

def _check_delta(delta: float) -> None:
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")


def _check_n(n: int, minimum: int = 1) -> None:
    if int(n) != n or n < minimum:
        raise ValueError(f"n must be an integer >= {minimum}, got {n}")


def _check_lambda(lambda_: float, floor: float = 0.5) -> None:
    if not lambda_ > floor:
        raise ValueError(f"lambda must be > {floor:g}, got {lambda_}")


def _check_nonneg(name: str, value: float) -> None:
    if not value >= 0:
        raise ValueError(f"{name} must be non-negative, got {value}")


def _check_l_max(l_max: float) -> None:
    if not l_max > 0:
        raise ValueError(f"l_max must be positive, got {l_max}")


# ── Shared formula shapes ────────────────────────────────────────────────

def _lambda_form(emp: float, complexity: float, lambda_: float, n: int, l_max: float) -> float:
    return (emp + lambda_ * l_max * complexity / n) / (1.0 - 1.0 / (2.0 * lambda_))


def _catoni_hc_form(emp: float, complexity: float, lambda_: float, n: int, l_max: float) -> float:
    slack = l_max * math.sqrt(complexity / (2.0 * n)) + lambda_ * l_max * complexity / n
    return (emp + slack) / (1.0 - 2.0 / lambda_)


def _bernstein_form(mu_hat: float, sigma2: float, complexity: float, n: int, l_max: float) -> float:
    return mu_hat + math.sqrt(2.0 * sigma2 * complexity / n) + 3.0 * l_max * complexity / n


def _lambda_report(kind, emp, complexity, lambda_, n, delta, l_max, **extra) -> BoundReport:
    report = BoundReport(
        kind=kind,
        value=_lambda_form(emp, complexity, lambda_, n, l_max),
        empirical_term=float(emp),
        complexity_nats=float(complexity),
        lambda_=float(lambda_),
        delta=float(delta),
        n=int(n),
        l_max=float(l_max),
        **extra,
    )
    if report.vacuous:
        logger.debug(f"{kind.value} bound is vacuous: {report.value:.6g} > l_max={l_max:g}")
    return report


# ── Occam (finite / countable classes) ───────────────────────────────────

def occam_lambda_star(l_hat: float, complexity_nats: float, n: int, l_max: float) -> float:
    """Closed-form minimiser ½(1 + √(1 + 2a/b)) with a = l̂, b = l_max·C/n.

    Returns +inf when b = 0 (the objective then decreases in λ).
    """
    b = l_max * complexity_nats / n
    if b <= 0:
        return math.inf
    return 0.5 * (1.0 + math.sqrt(1.0 + 2.0 * l_hat / b))


def lambda_cap_factor(lambda_max: float) -> float:
    """Worst-case inflation 1/(1 − 1/(2λ_max)) from restricting λ ≤ λ_max."""
    _check_lambda(lambda_max)
    return 1.0 / (1.0 - 1.0 / (2.0 * lambda_max))


@bound_calculator(BoundKind.OCCAM.value)
def occam_bound(
    l_hat: float,
    prior_nats: float,
    n: int,
    delta: float,
    l_max: float,
    *,
    lambda_cap: float | None = None,
) -> BoundReport:
    """Occam bound for one hypothesis, optimised over λ ∈ (1/2, λ_cap].

    Coarse geometric grid, then golden-section refinement; the closed-form
    minimiser is evaluated too and the better of the two is kept.
    """
    _check_delta(delta)
    _check_n(n)
    _check_l_max(l_max)
    _check_nonneg("prior_nats", prior_nats)
    _check_nonneg("l_hat", l_hat)
    cap = float(lambda_cap if lambda_cap is not None else cfg.OCCAM_LAMBDA_CAP)
    floor = cfg.OCCAM_LAMBDA_FLOOR
    if cap < floor:
        raise ValueError(f"lambda_cap must be >= {floor}, got {cap}")

    complexity = prior_nats + math.log(1.0 / delta)

    def objective(lam: float) -> float:
        return _lambda_form(l_hat, complexity, lam, n, l_max)

    grid = np.geomspace(floor, cap, cfg.OCCAM_COARSE_GRID_POINTS)
    values = _lambda_form(l_hat, complexity, grid, n, l_max)
    i = int(np.argmin(values))
    best_lam = float(grid[i])
    if 0 < i < grid.size - 1:
        try:
            res = optimize.minimize_scalar(
                objective,
                bracket=(float(grid[i - 1]), best_lam, float(grid[i + 1])),
                method="golden",
                tol=cfg.OCCAM_GOLDEN_TOL,
            )
            if floor <= res.x <= cap and objective(res.x) <= objective(best_lam):
                best_lam = float(res.x)
        except ValueError as e:
            # flat objective around the grid minimum
            logger.debug(f"Golden-section refinement skipped: {e}")

    lam_star = min(max(occam_lambda_star(l_hat, complexity, n, l_max), floor), cap)
    if objective(lam_star) < objective(best_lam):
        best_lam = lam_star

    return _lambda_report(BoundKind.OCCAM, l_hat, complexity, best_lam, n, delta, l_max)


def sqrt_product_inf(a: float, b: float) -> float:
    """Numeric inf over λ > 0 of a/(2λ) + λb/2 (equals √(ab))."""
    if not (a > 0 and b > 0):
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")
    centre = 0.5 * math.log(a / b)
    res = optimize.minimize_scalar(
        lambda t: a / (2.0 * math.exp(t)) + math.exp(t) * b / 2.0,
        bracket=(centre - 5.0, centre + 5.0),
        method="brent",
        tol=1e-12,
    )
    return float(res.fun)


def occam_epsilon(true_loss: float, prior_nats: float, n: int, delta: float) -> float:
    """ε(h) = √(2·L(h)·(ln(1/P(h)) + ln(1/δ)) / N) from the relative-Chernoff union step."""
    _check_delta(delta)
    _check_n(n)
    return math.sqrt(2.0 * true_loss * (prior_nats + math.log(1.0 / delta)) / n)


def relative_chernoff_ceiling(true_loss: float, n: int, epsilon: float) -> float:
    """e^{−Nε²/(2L)}; 1 at ε = 0 and 0 for L = 0 with ε > 0."""
    if epsilon <= 0:
        return 1.0
    if true_loss <= 0:
        return 0.0
    return math.exp(-n * epsilon**2 / (2.0 * true_loss))


# ── PAC-Bayes family ─────────────────────────────────────────────────────

@bound_calculator(BoundKind.PAC_BAYES.value)
def pac_bayes_bound(
    l_hat_q: float, kl_nats: float, n: int, delta: float, l_max: float, lambda_: float
) -> BoundReport:
    """Fixed-λ PAC-Bayes bound, simultaneous over posteriors Q.

    λ must be chosen before the sample is seen.
    """
    _check_lambda(lambda_)
    _check_delta(delta)
    _check_n(n)
    _check_l_max(l_max)
    _check_nonneg("kl_nats", kl_nats)
    complexity = kl_nats + math.log(1.0 / delta)
    return _lambda_report(BoundKind.PAC_BAYES, l_hat_q, complexity, lambda_, n, delta, l_max)


@bound_calculator(BoundKind.PAC_BAYES_GRID.value)
def pac_bayes_grid(
    l_hat_q: float, kl_nats: float, n: int, delta: float, l_max: float, grid
) -> BoundReport:
    """Best of k pre-declared λ values, paying ln(k/δ) for the union."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    for lam in grid:
        _check_lambda(lam)
    _check_delta(delta)
    _check_n(n)
    _check_l_max(l_max)
    _check_nonneg("kl_nats", kl_nats)
    complexity = kl_nats + math.log(len(grid) / delta)
    values = [_lambda_form(l_hat_q, complexity, lam, n, l_max) for lam in grid]
    best = grid[int(np.argmin(values))]
    return _lambda_report(BoundKind.PAC_BAYES_GRID, l_hat_q, complexity, best, n, delta, l_max)


@bound_calculator(BoundKind.L2.value)
def l2_bound(posterior, l_hat_q: float, n: int, delta: float, l_max: float, lambda_: float) -> BoundReport:
    """PAC-Bayes bound for a unit-variance Gaussian posterior, KL = ½‖Θ‖²."""
    report = pac_bayes_bound(l_hat_q, posterior.kl(), n, delta, l_max, lambda_)
    report.kind = BoundKind.L2
    return report


@bound_calculator(BoundKind.DROPOUT.value)
def dropout_bound(posterior, l_hat_q: float, n: int, delta: float, l_max: float, lambda_: float) -> BoundReport:
    """PAC-Bayes bound for a dropout posterior, KL = ((1−α)/2)‖Θ‖².

    α must be fixed before the sample is seen.
    """
    report = pac_bayes_bound(l_hat_q, posterior.kl(), n, delta, l_max, lambda_)
    report.kind = BoundKind.DROPOUT
    return report


# ── Training-variance bounds (expectations over S) ───────────────────────

@bound_calculator(BoundKind.TRAIN_VAR.value)
def train_var_bound(e_l_hat: float, e_kl_to_mean: float, n: int, l_max: float, lambda_: float) -> BoundReport:
    """E_S L(Q_A(S)) bound with the KL to the mean posterior Q̄_A.

    An expectation statement, so the report records δ = 1.
    """
    _check_lambda(lambda_)
    _check_n(n)
    _check_l_max(l_max)
    _check_nonneg("e_kl_to_mean", e_kl_to_mean)
    return _lambda_report(BoundKind.TRAIN_VAR, e_l_hat, e_kl_to_mean, lambda_, n, 1.0, l_max)


@bound_calculator(BoundKind.TRAIN_VAR_PRIOR.value)
def train_var_prior_bound(e_l_hat: float, e_kl_to_prior: float, n: int, l_max: float, lambda_: float) -> BoundReport:
    _check_lambda(lambda_)
    _check_n(n)
    _check_l_max(l_max)
    _check_nonneg("e_kl_to_prior", e_kl_to_prior)
    return _lambda_report(BoundKind.TRAIN_VAR_PRIOR, e_l_hat, e_kl_to_prior, lambda_, n, 1.0, l_max)


@bound_calculator(BoundKind.LOCAL_HC.value)
def local_hc_bound(
    l_hat_q: float, kl_to_mean_est: float, n: int, delta: float, l_max: float, lambda_: float
) -> BoundReport:
    """PAC-Bayes form with the KL measured to an estimated mean posterior.

    The mean posterior is only ever a resampling estimate, so the report is
    flagged ``estimated_prior`` and kept out of strict certification.
    """
    report = pac_bayes_bound(l_hat_q, kl_to_mean_est, n, delta, l_max, lambda_)
    report.kind = BoundKind.LOCAL_HC
    report.estimated_prior = True
    return report


# ── Catoni chain ─────────────────────────────────────────────────────────

@bound_calculator(BoundKind.CATONI_EXPECTED.value)
def catoni_expected_bound(
    e_l_hat: float, lambda_: float, *, n: int | None = None, l_max: float = 1.0
) -> BoundReport:
    """E_S L(Q_λ(S)) ≤ E_S L̂(Q_λ(S)) / (1 − 2/λ)."""
    _check_lambda(lambda_, floor=2.0)
    _check_nonneg("e_l_hat", e_l_hat)
    return BoundReport(
        kind=BoundKind.CATONI_EXPECTED,
        value=e_l_hat / (1.0 - 2.0 / lambda_),
        empirical_term=float(e_l_hat),
        complexity_nats=0.0,
        lambda_=float(lambda_),
        delta=1.0,
        n=None if n is None else int(n),
        l_max=float(l_max),
    )


@bound_calculator(BoundKind.CATONI_HC.value)
def catoni_hc_bound(l_hat_q: float, n: int, delta: float, l_max: float, lambda_: float) -> BoundReport:
    """High-confidence Catoni form, union of the Hoeffding and local steps (ln(2/δ))."""
    _check_lambda(lambda_, floor=2.0)
    _check_delta(delta)
    _check_n(n)
    _check_l_max(l_max)
    complexity = math.log(2.0 / delta)
    return BoundReport(
        kind=BoundKind.CATONI_HC,
        value=_catoni_hc_form(l_hat_q, complexity, lambda_, n, l_max),
        empirical_term=float(l_hat_q),
        complexity_nats=complexity,
        lambda_=float(lambda_),
        delta=float(delta),
        n=int(n),
        l_max=float(l_max),
    )


def kl_gibbs_upper(
    expected: bool,
    l_q: float,
    l_hat_q: float,
    n: int,
    l_max: float,
    lambda_: float,
    delta: float | None = None,
) -> float:
    """Upper bound (nats) on 𝓓(Q_λ(S), Q̈_λ).

    Expected form: (n/(λ·l_max))·(L(Q) − L̂(Q)).  The high-confidence form
    adds (n/λ)·√(ln(1/δ)/(2n)).
    """
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    _check_n(n)
    _check_l_max(l_max)
    value = (n / (lambda_ * l_max)) * (l_q - l_hat_q)
    if expected:
        return value
    if delta is None:
        raise ValueError("delta is required for the high-confidence form")
    _check_delta(delta)
    return value + (n / lambda_) * math.sqrt(math.log(1.0 / delta) / (2.0 * n))


# ── Empirical Bernstein and realizable forms ─────────────────────────────

@bound_calculator(BoundKind.BERNSTEIN.value)
def bernstein_bound(mu_hat: float, sigma2_hat: float, n: int, delta: float, l_max: float) -> BoundReport:
    """μ̂ + √(2σ̂²·ln(3/δ)/N) + 3·l_max·ln(3/δ)/N for a single hypothesis."""
    _check_nonneg("sigma2_hat", sigma2_hat)
    _check_delta(delta)
    _check_n(n, minimum=2)
    _check_l_max(l_max)
    complexity = math.log(3.0 / delta)
    return BoundReport(
        kind=BoundKind.BERNSTEIN,
        value=_bernstein_form(mu_hat, sigma2_hat, complexity, n, l_max),
        empirical_term=float(mu_hat),
        complexity_nats=complexity,
        lambda_=None,
        delta=float(delta),
        n=int(n),
        l_max=float(l_max),
        variance=float(sigma2_hat),
    )


@bound_calculator(BoundKind.BERNSTEIN_UNION.value)
def bernstein_union(
    mu_hat: float, sigma2_hat: float, prior_nats: float, n: int, delta: float, l_max: float
) -> BoundReport:
    """Bernstein bound with ln(1/P(h)) + ln(3/δ) in place of ln(3/δ)."""
    _check_nonneg("prior_nats", prior_nats)
    report = bernstein_bound(mu_hat, sigma2_hat, n, delta, l_max)
    complexity = prior_nats + report.complexity_nats
    report.kind = BoundKind.BERNSTEIN_UNION
    report.complexity_nats = complexity
    report.value = _bernstein_form(mu_hat, sigma2_hat, complexity, n, l_max)
    return report


@bound_calculator(BoundKind.ZERO_VARIANCE.value)
def zero_variance_bound(l_hat: float, prior_nats: float, n: int, delta: float, l_max: float) -> BoundReport:
    """L̂(h) + l_max·(ln(1/P(h)) + ln(1/δ))/(N − 1); caller asserts σ̂²(h) = 0."""
    _check_n(n, minimum=2)
    _check_delta(delta)
    _check_l_max(l_max)
    _check_nonneg("prior_nats", prior_nats)
    complexity = prior_nats + math.log(1.0 / delta)
    return BoundReport(
        kind=BoundKind.ZERO_VARIANCE,
        value=l_hat + l_max * complexity / (n - 1),
        empirical_term=float(l_hat),
        complexity_nats=complexity,
        lambda_=None,
        delta=float(delta),
        n=int(n),
        l_max=float(l_max),
        variance=0.0,
    )
