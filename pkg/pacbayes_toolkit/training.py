"""SGD minimisation of the Gaussian-shift and dropout PAC-Bayes bounds over Θ.

The update is

    Θ ← Θ − η_t · c · (ĝ + (λ·l_max/N)·∇Θ KL),     c = 1/(1 − 1/(2λ))

with ĝ a minibatch MC gradient of L̂(Q_Θ), ∇Θ KL = Θ (Gaussian) or (1−α)Θ
(dropout) and η_t = η₀/(1+t)^κ.  The leading c is a positive constant and
does not move the minimiser.  λ and α must be fixed before the data are drawn.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import BoundReport, dropout_bound, l2_bound
from pacbayes_toolkit.models import (
    LinearBinaryModel,
    Model,
    PreparedData,
    binary_empirical_stochastic_grad,
    binary_empirical_stochastic_loss,
    mc_gradient,
    mc_posterior_loss,
    prepare_data,
)
from pacbayes_toolkit.posteriors import DropoutPosterior, GaussianShiftPosterior
from pacbayes_toolkit.rng import stream

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Θ became non-finite during SGD."""

    def __init__(self, step: int, theta_norm: float, message: str | None = None):
        self.step = step
        self.theta_norm = theta_norm
        super().__init__(message or f"SGD diverged at step {step} (|theta| = {theta_norm})")

    def to_dict(self) -> dict:
        return {
            "type": type(self).__name__,
            "message": str(self),
            "step": self.step,
            "theta_norm": None if not math.isfinite(self.theta_norm) else self.theta_norm,
        }


@dataclass
class TrainConfig:
    lambda_: float = 1.0
    delta: float = 0.05
    alpha: float | None = None
    eta0: float = 0.1
    kappa: float = 0.5
    minibatch: int = 32
    mc_per_step: int = 4
    steps: int = 1000
    seed: int = 0
    theta0: list[float] | None = None
    checkpoint_every: int = 10
    checkpoint_mc: int = field(default_factory=lambda: cfg.CHECKPOINT_MC_DRAWS)
    final_mc: int = field(default_factory=lambda: cfg.FINAL_MC_DRAWS)

    def __post_init__(self):
        if not self.lambda_ > 0.5:
            raise ValueError(f"lambda must be > 1/2, got {self.lambda_}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.eta0 > 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        for name in ("minibatch", "mc_per_step", "steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.checkpoint_mc < 2 or self.final_mc < 2:
            raise ValueError("checkpoint_mc and final_mc must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Build from a config block; unset keys fall back to ``cfg.TRAINING``."""
        merged = {**cfg.TRAINING, **d}
        if "lambda" in merged:
            merged["lambda_"] = merged.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(merged) - known
        if unknown:
            raise KeyError(f"No training option named '{sorted(unknown)[0]}'")
        return cls(**merged)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - 1.0 / (2.0 * self.lambda_))


@dataclass
class TraceRecord:
    step: int
    objective: float  # L̂(Q) + (λ·l_max/N)·KL
    objective_se: float
    bound: float
    theta_norm: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [asdict(r) for r in self.records],
            columns=["step", "objective", "objective_se", "bound", "theta_norm"],
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "TrainTrace":
        return cls([
            TraceRecord(int(r.step), float(r.objective), float(r.objective_se), float(r.bound), float(r.theta_norm))
            for r in df.itertuples(index=False)
        ])

    def smoothed_objective(self, window: int = 10) -> np.ndarray:
        return self.to_frame()["objective"].rolling(window, min_periods=1).mean().to_numpy()


# ── Objective pieces ─────────────────────────────────────────────────────

def _posterior(theta: np.ndarray, config: TrainConfig):
    if config.alpha is None:
        return GaussianShiftPosterior(theta)
    return DropoutPosterior(config.alpha, theta)


def _check_model(model: Model, config: TrainConfig) -> None:
    if isinstance(model, LinearBinaryModel) and config.alpha is not None:
        raise ValueError("the binary closed-form loss supports the Gaussian posterior only")


def _kl_grad(theta: np.ndarray, config: TrainConfig) -> np.ndarray:
    return theta if config.alpha is None else (1.0 - config.alpha) * theta


def _loss_estimate(theta, prep: PreparedData, model: Model, config: TrainConfig, n_mc: int, rng) -> tuple[float, float]:
    if isinstance(model, LinearBinaryModel):
        return binary_empirical_stochastic_loss(theta, prep, model), 0.0
    return mc_posterior_loss(_posterior(theta, config), prep, model, n_mc, rng)


def _objective_terms(theta, data, model: Model, config: TrainConfig, n_mc: int, rng) -> tuple[float, float, float, float]:
    """(bound value, its SE, loss estimate, KL) at Θ."""
    _check_model(model, config)
    theta = np.asarray(theta, dtype=float)
    prep = prepare_data(model, data)
    loss, se = _loss_estimate(theta, prep, model, config, n_mc, rng)
    kl = _posterior(theta, config).kl()
    rate = config.lambda_ * model.l_max / prep.n
    value = config.scale * (loss + rate * (kl + math.log(1.0 / config.delta)))
    return value, config.scale * se, loss, kl


def objective_estimate(theta, data, model: Model, config: TrainConfig, n_mc: int, rng) -> float:
    """c·(L̂(Q_Θ) estimate + (λ·l_max/N)·(KL(Θ) + ln(1/δ)))."""
    return _objective_terms(theta, data, model, config, n_mc, rng)[0]


def objective_gradient(theta, data, model: Model, config: TrainConfig, n_mc: int, rng) -> np.ndarray:
    """∇Θ of the bound objective, MC for multiclass and closed form for binary."""
    _check_model(model, config)
    theta = np.asarray(theta, dtype=float)
    prep = prepare_data(model, data)
    if isinstance(model, LinearBinaryModel):
        g = binary_empirical_stochastic_grad(theta, prep, model)
    else:
        g = mc_gradient(_posterior(theta, config), prep, model, n_mc, rng)
    return config.scale * (g + (config.lambda_ * model.l_max / prep.n) * _kl_grad(theta, config))


def _final_report(theta, prep, model, config) -> BoundReport:
    rng = stream(config.seed, "train", "final")
    loss, se = _loss_estimate(theta, prep, model, config, config.final_mc, rng)
    bound_fn = l2_bound if config.alpha is None else dropout_bound
    report = bound_fn(_posterior(theta, config), loss, prep.n, config.delta, model.l_max, config.lambda_)
    report.mc_std_error = config.scale * se
    return report


# ── SGD ──────────────────────────────────────────────────────────────────

def sgd_minimize_bound(data, model: Model, config: TrainConfig) -> tuple[np.ndarray, TrainTrace, BoundReport]:
    """Minimise the L2 (or dropout) bound over Θ by SGD.

    Returns the final Θ, the checkpoint trace and the bound at Θ_final with
    a fresh ``config.final_mc``-draw loss estimate.
    """
    _check_model(model, config)
    prep = prepare_data(model, data)
    n = prep.n
    d = prep.units.shape[-1]
    theta = np.zeros(d) if config.theta0 is None else np.array(config.theta0, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"theta0 must have dimension {d}, got {theta.shape}")

    batch_rng = stream(config.seed, "train", "minibatch")
    mc_rng = stream(config.seed, "train", "mc")
    batch = min(config.minibatch, n)
    rate = config.lambda_ * model.l_max / n
    trace = TrainTrace()

    def checkpoint(step: int) -> None:
        # same draws at every checkpoint, so trace differences are not MC noise
        rng = stream(config.seed, "train", "checkpoint")
        value, se, loss, kl = _objective_terms(theta, prep, model, config, config.checkpoint_mc, rng)
        trace.records.append(TraceRecord(step, loss + rate * kl, se / config.scale, value, float(np.linalg.norm(theta))))

    checkpoint(0)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(config.steps):
            idx = np.sort(batch_rng.choice(n, size=batch, replace=False))
            sub = prep.take(idx)
            if isinstance(model, LinearBinaryModel):
                g = binary_empirical_stochastic_grad(theta, sub, model)
            else:
                g = mc_gradient(_posterior(theta, config), sub, model, config.mc_per_step, mc_rng)
            eta = config.eta0 / (1.0 + t) ** config.kappa
            theta = theta - eta * config.scale * (g + rate * _kl_grad(theta, config))
            if not np.all(np.isfinite(theta)):
                raise TrainingDivergedError(step=t + 1, theta_norm=float(np.linalg.norm(theta)))
            if (t + 1) % config.checkpoint_every == 0 or t + 1 == config.steps:
                checkpoint(t + 1)
                logger.debug(f"step {t + 1}: bound {trace.records[-1].bound:.6g}")

    report = _final_report(theta, prep, model, config)
    logger.info(
        f"Trained {config.steps} steps: |theta|={np.linalg.norm(theta):.4g}, "
        f"{report.kind.value} bound {report.value:.6g} (MC SE {report.mc_std_error:.2g})"
    )
    return theta, trace, report


def grid_search_objective(
    data, model: Model, config: TrainConfig, axis: np.ndarray, n_mc: int, seed: int
) -> tuple[np.ndarray, float, float]:
    """Brute-force the bound objective over a 2-d lattice axis × axis.

    Every lattice point uses the same draws.  Returns (best Θ, value, SE).
    """
    prep = prepare_data(model, data)
    if prep.units.shape[-1] != 2:
        raise ValueError("grid search is defined for d = 2 only")
    best = (None, math.inf, 0.0)
    for a in axis:
        for b in axis:
            theta = np.array([a, b], dtype=float)
            value, se, _, _ = _objective_terms(theta, prep, model, config, n_mc, stream(seed, "grid"))
            if value < best[1]:
                best = (theta, value, se)
    return best
