"""Monte-Carlo validity experiments for the high-probability bounds.

A validity experiment draws M independent samples from a finite world,
evaluates a bound on each and compares it with the exact true loss of the
bound's subject.  The violation frequency is reported with an exact
(Clopper-Pearson) upper confidence limit; a certified bound passes when that
limit is at most δ.

Trial kinds are registered with ``@validity_trial``::

    @validity_trial("my_kind")
    def my_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome: ...

Kinds quantified over every hypothesis (occam, bernstein_union,
zero_variance, realizable) count a trial as violated if any hypothesis is.
PAC-Bayes kinds test the per-sample Gibbs posterior at the same λ.
"""

import functools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy import stats

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import (
    bernstein_union,
    catoni_hc_bound,
    kl_gibbs_upper,
    local_hc_bound,
    occam_bound,
    pac_bayes_bound,
    zero_variance_bound,
)
from pacbayes_toolkit.hypothesis_spaces import (
    BoundedLoss,
    FiniteHypothesisSpace,
    FiniteWorld,
    SampleSet,
    loss_table,
    true_losses,
)
from pacbayes_toolkit.posteriors import gibbs_from_losses, kl_discrete, select_lambda
from pacbayes_toolkit.rng import make_rng, stream_key
from pacbayes_toolkit.worlds import draw_sample

logger = logging.getLogger(__name__)


# ── Records ──────────────────────────────────────────────────────────────

@dataclass
class TrialOutcome:
    bound_value: float
    true_loss: float
    lambda_: float | None = None
    kl: float | None = None
    l_hat: float | None = None
    subject: int | None = None  # hypothesis index for per-hypothesis kinds


@dataclass
class TrialRecord:
    trial_index: int
    sample_seed: int
    bound_value: float
    true_loss: float
    violated: bool
    lambda_: float | None = None
    kl: float | None = None
    l_hat: float | None = None
    subject: int | None = None

    @classmethod
    def from_outcome(cls, index: int, seed: int, outcome: TrialOutcome) -> "TrialRecord":
        return cls(
            trial_index=index,
            sample_seed=seed,
            bound_value=float(outcome.bound_value),
            true_loss=float(outcome.true_loss),
            violated=bool(outcome.true_loss > outcome.bound_value + cfg.VIOLATION_TOLERANCE),
            lambda_=outcome.lambda_,
            kl=outcome.kl,
            l_hat=outcome.l_hat,
            subject=outcome.subject,
        )


TRIAL_COLUMNS = [
    "trial_index", "sample_seed", "bound_value", "true_loss", "violated", "lambda", "kl", "l_hat", "subject",
]


def binomial_upper_limit(k: int, m: int, level: float | None = None) -> float:
    """One-sided exact (Clopper-Pearson) upper confidence limit for k/m."""
    level = cfg.CONFIDENCE_LEVEL if level is None else level
    if m < 1 or not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m and m >= 1, got k={k}, m={m}")
    if k == m:
        return 1.0
    return float(stats.beta.ppf(level, k + 1, m - k))


@dataclass
class ValidityReport:
    kind: str
    m: int
    delta: float
    violation_count: int
    violation_rate: float
    upper_limit: float
    certified: bool = True
    n: int | None = None
    confidence_level: float = field(default_factory=lambda: cfg.CONFIDENCE_LEVEL)
    trials: list[TrialRecord] = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.upper_limit <= self.delta

    @classmethod
    def from_trials(cls, kind: str, delta: float, trials: list[TrialRecord], *, certified: bool = True, n=None):
        m = len(trials)
        k = sum(t.violated for t in trials)
        return cls(
            kind=kind,
            m=m,
            delta=float(delta),
            violation_count=int(k),
            violation_rate=k / m,
            upper_limit=binomial_upper_limit(k, m),
            certified=certified,
            n=n,
            trials=list(trials),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trials")
        d["passed"] = self.passed
        return d

    @classmethod
    def from_dict(cls, d: dict, trials: list[TrialRecord] | None = None) -> "ValidityReport":
        d = dict(d)
        d.pop("passed", None)
        return cls(**d, trials=list(trials or []))

    def trials_frame(self) -> pd.DataFrame:
        rows = []
        for t in self.trials:
            row = asdict(t)
            row["lambda"] = row.pop("lambda_")
            rows.append(row)
        return pd.DataFrame(rows, columns=TRIAL_COLUMNS)

    @staticmethod
    def trials_from_frame(df: pd.DataFrame) -> list[TrialRecord]:
        def opt(v, kind):
            return None if pd.isna(v) else kind(v)

        return [
            TrialRecord(
                trial_index=int(r["trial_index"]),
                sample_seed=int(r["sample_seed"]),
                bound_value=float(r["bound_value"]),
                true_loss=float(r["true_loss"]),
                violated=bool(r["violated"]),
                lambda_=opt(r["lambda"], float),
                kl=opt(r["kl"], float),
                l_hat=opt(r["l_hat"], float),
                subject=opt(r["subject"], int),
            )
            for _, r in df.iterrows()
        ]


# ── Trial context ────────────────────────────────────────────────────────

@dataclass
class TrialParams:
    n: int
    delta: float
    lambda_: float | None = None
    grid: list[float] | None = None
    mean_posterior: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrialParams":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        return cls(**d)

    def require_lambda(self, floor: float = 0.5) -> float:
        if self.lambda_ is None or not self.lambda_ > floor:
            raise ValueError(f"lambda must be > {floor:g} for this trial kind, got {self.lambda_}")
        return self.lambda_


@dataclass
class TrialContext:
    """Everything about the world that trials share (read-only)."""

    world: FiniteWorld
    space: FiniteHypothesisSpace
    loss: BoundedLoss
    params: TrialParams
    table: np.ndarray = field(init=False)
    true: np.ndarray = field(init=False)
    prior_nats: np.ndarray = field(init=False)

    def __post_init__(self):
        self.table = loss_table(self.loss, self.space, self.world)
        self.true = true_losses(self.table, self.world)
        self.prior_nats = self.space.prior_nats()

    def empirical(self, sample: SampleSet) -> tuple[np.ndarray, np.ndarray]:
        """(L̂(h), per-situation losses) for every hypothesis."""
        rows = self.table[:, sample.indices()]
        return rows.mean(axis=1), rows


TrialFn = Callable[[TrialContext, SampleSet], TrialOutcome]

# Registry: list of (name, trial function, certified).
_VALIDITY_TRIALS: list[tuple[str, TrialFn, bool]] = []


def register_validity_trial(name: str, fn: TrialFn, *, certified: bool = True) -> None:
    """Register a validity trial kind.  Uncertified kinds are reported but never fail a run."""
    for i, (n, _, _) in enumerate(_VALIDITY_TRIALS):
        if n == name:
            _VALIDITY_TRIALS[i] = (name, fn, certified)
            return
    _VALIDITY_TRIALS.append((name, fn, certified))
    logger.debug(f"Registered validity trial: {name} (certified={certified})")


def validity_trial(name: str, *, certified: bool = True):
    def decorator(fn):
        register_validity_trial(name, fn, certified=certified)
        return fn
    return decorator


def list_validity_trials() -> list[tuple[str, bool]]:
    """Return registered trial kinds and whether each is certified."""
    return [(name, certified) for name, _, certified in _VALIDITY_TRIALS]


def get_validity_trial(name: str) -> tuple[TrialFn, bool]:
    for n, fn, certified in _VALIDITY_TRIALS:
        if n == name:
            return fn, certified
    raise KeyError(f"No validity trial named '{name}'")


# ── Built-in trial kinds ─────────────────────────────────────────────────

@functools.lru_cache(maxsize=65536)
def _occam_value(l_hat: float, prior_nats: float, n: int, delta: float, l_max: float) -> float:
    return occam_bound(l_hat, prior_nats, n, delta, l_max).value


def _worst(bounds: np.ndarray, truths: np.ndarray, candidates: np.ndarray) -> tuple[int | None, float, float]:
    """Hypothesis with the largest true − bound gap among ``candidates``."""
    if candidates.size == 0:
        return None, math.inf, 0.0
    gaps = truths[candidates] - bounds[candidates]
    h = int(candidates[int(np.argmax(gaps))])
    return h, float(bounds[h]), float(truths[h])


@validity_trial("occam")
def occam_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    l_hat, _ = ctx.empirical(sample)
    p = ctx.params
    bounds = np.array([
        _occam_value(float(l_hat[h]), float(ctx.prior_nats[h]), p.n, p.delta, ctx.loss.l_max)
        for h in range(len(ctx.space))
    ])
    h, bound, true = _worst(bounds, ctx.true, np.flatnonzero(np.isfinite(ctx.prior_nats)))
    return TrialOutcome(bound, true, l_hat=None if h is None else float(l_hat[h]), subject=h)


@validity_trial("pac_bayes")
def pac_bayes_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    p = ctx.params
    lam = p.require_lambda()
    l_hat, _ = ctx.empirical(sample)
    q = gibbs_from_losses(ctx.space, l_hat, p.n, lam, ctx.loss.l_max)
    w = q.weights
    kl = q.kl()
    report = pac_bayes_bound(float(w @ l_hat), kl, p.n, p.delta, ctx.loss.l_max, lam)
    return TrialOutcome(report.value, float(w @ ctx.true), lambda_=lam, kl=kl, l_hat=report.empirical_term)


@validity_trial("pac_bayes_grid")
def pac_bayes_grid_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    p = ctx.params
    grid = p.grid or cfg.DEFAULT_LAMBDA_GRID
    lam, q, report = select_lambda(grid, sample, ctx.space, ctx.loss, p.delta)
    return TrialOutcome(
        report.value, float(q.weights @ ctx.true), lambda_=lam, kl=q.kl(), l_hat=report.empirical_term
    )


@validity_trial("catoni_hc")
def catoni_hc_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    p = ctx.params
    lam = p.require_lambda(floor=2.0)
    l_hat, _ = ctx.empirical(sample)
    w = gibbs_from_losses(ctx.space, l_hat, p.n, lam, ctx.loss.l_max).weights
    report = catoni_hc_bound(float(w @ l_hat), p.n, p.delta, ctx.loss.l_max, lam)
    return TrialOutcome(report.value, float(w @ ctx.true), lambda_=lam, l_hat=report.empirical_term)


@validity_trial("kl_gibbs_hc")
def kl_gibbs_hc_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    """𝓓(Q_λ(S), Q̈_λ) against its high-confidence upper bound."""
    p = ctx.params
    lam = p.require_lambda(floor=0.0)
    l_hat, _ = ctx.empirical(sample)
    q = gibbs_from_losses(ctx.space, l_hat, p.n, lam, ctx.loss.l_max).weights
    q_ideal = gibbs_from_losses(ctx.space, ctx.true, p.n, lam, ctx.loss.l_max).weights
    kl = kl_discrete(q, q_ideal)
    upper = kl_gibbs_upper(False, float(q @ ctx.true), float(q @ l_hat), p.n, ctx.loss.l_max, lam, p.delta)
    return TrialOutcome(upper, kl, lambda_=lam, kl=kl, l_hat=float(q @ l_hat))


@validity_trial("bernstein_union")
def bernstein_union_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    p = ctx.params
    if p.n < 2:
        raise ValueError("bernstein trials need n >= 2")
    l_hat, rows = ctx.empirical(sample)
    var = rows.var(axis=1, ddof=1)
    finite = np.flatnonzero(np.isfinite(ctx.prior_nats))
    bounds = np.full(len(ctx.space), math.inf)
    for h in finite:
        bounds[h] = bernstein_union(
            float(l_hat[h]), float(var[h]), float(ctx.prior_nats[h]), p.n, p.delta, ctx.loss.l_max
        ).value
    h, bound, true = _worst(bounds, ctx.true, finite)
    return TrialOutcome(bound, true, l_hat=None if h is None else float(l_hat[h]), subject=h)


def _zero_variance_set(ctx: TrialContext, rows: np.ndarray) -> np.ndarray:
    constant = np.all(rows == rows[:, :1], axis=1)
    return np.flatnonzero(constant & np.isfinite(ctx.prior_nats))


@validity_trial("zero_variance")
def zero_variance_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    p = ctx.params
    if p.n < 2:
        raise ValueError("zero-variance trials need n >= 2")
    l_hat, rows = ctx.empirical(sample)
    candidates = _zero_variance_set(ctx, rows)
    bounds = np.full(len(ctx.space), math.inf)
    for h in candidates:
        bounds[h] = zero_variance_bound(
            float(l_hat[h]), float(ctx.prior_nats[h]), p.n, p.delta, ctx.loss.l_max
        ).value
    h, bound, true = _worst(bounds, ctx.true, candidates)
    return TrialOutcome(bound, true, l_hat=None if h is None else float(l_hat[h]), subject=h)


@validity_trial("realizable")
def realizable_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    """Outlier rate μ(h) = P_s(L(h,s) ≠ L(h,s₁)) of each zero-variance h vs (ln 1/P(h) + ln 1/δ)/(N−1)."""
    p = ctx.params
    if p.n < 2:
        raise ValueError("realizable trials need n >= 2")
    _, rows = ctx.empirical(sample)
    candidates = _zero_variance_set(ctx, rows)
    first = rows[:, 0]
    outlier_rate = (ctx.table != first[:, None]).astype(float) @ ctx.world.probs
    thresholds = (ctx.prior_nats + math.log(1.0 / p.delta)) / (p.n - 1)
    h, bound, true = _worst(thresholds, outlier_rate, candidates)
    return TrialOutcome(bound, true, subject=h)


@validity_trial("local_hc", certified=False)
def local_hc_trial(ctx: TrialContext, sample: SampleSet) -> TrialOutcome:
    """PAC-Bayes with the KL to an estimated mean posterior (not certified)."""
    p = ctx.params
    lam = p.require_lambda()
    if p.mean_posterior is None:
        raise ValueError("local_hc trials need params.mean_posterior")
    l_hat, _ = ctx.empirical(sample)
    w = gibbs_from_losses(ctx.space, l_hat, p.n, lam, ctx.loss.l_max).weights
    kl = kl_discrete(w, p.mean_posterior)
    report = local_hc_bound(float(w @ l_hat), kl, p.n, p.delta, ctx.loss.l_max, lam)
    return TrialOutcome(report.value, float(w @ ctx.true), lambda_=lam, kl=kl, l_hat=report.empirical_term)


# ── Experiment runner ────────────────────────────────────────────────────

def trial_seed(seed: int, kind: str, index: int) -> int:
    """64-bit seed of trial ``index``; reproduces that trial on its own."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(stream_key(kind), stream_key(index)))
    return int(seq.generate_state(1, np.uint64)[0])


def _base_seed(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


def run_validity_experiment(
    kind: str,
    world: FiniteWorld,
    space: FiniteHypothesisSpace,
    loss: BoundedLoss,
    params: TrialParams | dict,
    m_trials: int,
    rng: np.random.Generator | int,
    *,
    jobs: int | None = None,
) -> ValidityReport:
    """Run ``m_trials`` independent trials of ``kind`` and summarise violations.

    ``rng`` is a generator or an integer seed.  Trial i always uses the
    stream derived from (seed, kind, i), so results do not depend on ``jobs``.
    """
    if m_trials < 1:
        raise ValueError(f"m_trials must be >= 1, got {m_trials}")
    params = params if isinstance(params, TrialParams) else TrialParams.from_dict(params)
    trial_fn, certified = get_validity_trial(kind)
    ctx = TrialContext(world, space, loss, params)
    seed = _base_seed(rng)

    def run_one(i: int) -> TrialRecord:
        s = trial_seed(seed, kind, i)
        sample = draw_sample(world, params.n, make_rng(s))
        return TrialRecord.from_outcome(i, s, trial_fn(ctx, sample))

    workers = jobs or cfg.DEFAULT_JOBS or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        trials = list(pool.map(run_one, range(m_trials)))

    report = ValidityReport.from_trials(kind, params.delta, trials, certified=certified, n=params.n)
    msg = (
        f"Validity '{kind}': {report.violation_count}/{m_trials} violations, "
        f"upper limit {report.upper_limit:.4g} vs delta {params.delta:g}"
    )
    if certified and not report.passed:
        logger.warning(msg + " (FAILED)")
    else:
        logger.info(msg)
    return report


def realizable_outlier_check(
    world: FiniteWorld,
    space: FiniteHypothesisSpace,
    loss: BoundedLoss,
    n: int,
    delta: float,
    m_trials: int,
    rng: np.random.Generator | int,
    *,
    jobs: int | None = None,
) -> ValidityReport:
    """Zero-variance hypotheses' exact outlier rates vs the realizable bound."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return run_validity_experiment(
        "realizable", world, space, loss, TrialParams(n=n, delta=delta), m_trials, rng, jobs=jobs
    )
