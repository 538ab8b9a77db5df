"""Gibbs, Gaussian-shift and dropout posteriors with exact KL divergences.

Gibbs weights are held in the log domain and normalised with a max-shifted
log-sum-exp; N/(λ·l_max) routinely reaches 10^4.

The dropout prior Q_{α,0} mixes point masses at zero with Gaussians.  Its KL
is taken, as in the standard derivation, as the log-density ratio on the
sparse subspace selected by the mask: ((1−α)/2)·‖Θ‖².
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.bounds import BoundKind, BoundReport, pac_bayes_bound
from pacbayes_toolkit.hypothesis_spaces import (
    BoundedLoss,
    FiniteHypothesisSpace,
    SampleSet,
    empirical_loss,
    empirical_losses,
)

logger = logging.getLogger(__name__)

_WEIGHT_TOL = 1e-10


def _check_theta(theta) -> np.ndarray:
    arr = np.array(theta, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("theta must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("theta must be finite")
    arr.setflags(write=False)
    return arr


# ── Posterior types ──────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GibbsPosterior:
    """Q_λ(h) ∝ P(h)·exp(−N·L̂(h)/(λ·l_max)), stored as normalised log-weights."""

    space: FiniteHypothesisSpace
    lambda_: float
    l_max: float
    log_weights: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lw = np.array(self.log_weights, dtype=float)
        if lw.shape != (len(self.space),):
            raise ValueError("one log-weight per hypothesis is required")
        total = float(np.exp(special.logsumexp(lw)))
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"posterior weights must sum to 1, got {total:.15g}")
        if np.any(np.isfinite(lw) & (self.space.prior == 0)):
            raise ValueError("posterior support must lie inside the prior support")
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def kl(self) -> float:
        return kl_discrete(self.weights, self.space.prior)

    def __eq__(self, other):
        if not isinstance(other, GibbsPosterior):
            return NotImplemented
        return (
            self.space == other.space
            and self.lambda_ == other.lambda_
            and self.l_max == other.l_max
            and np.array_equal(self.log_weights, other.log_weights)
            and self.provenance == other.provenance
        )


@dataclass(frozen=True, eq=False)
class GaussianShiftPosterior:
    """Isotropic unit-variance Gaussian centred on Θ."""

    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _check_theta(self.theta))

    @property
    def d(self) -> int:
        return self.theta.size

    def kl(self) -> float:
        return gaussian_kl(self.theta)

    def __eq__(self, other):
        if not isinstance(other, GaussianShiftPosterior):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)


@dataclass(frozen=True, eq=False)
class DropoutPosterior:
    """s∘(Θ+ε) with sᵢ = 0 w.p. α independently and ε ~ N(0, I)."""

    alpha: float
    theta: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "theta", _check_theta(self.theta))

    @property
    def d(self) -> int:
        return self.theta.size

    def kl(self) -> float:
        return dropout_kl(self)

    def __eq__(self, other):
        if not isinstance(other, DropoutPosterior):
            return NotImplemented
        return self.alpha == other.alpha and np.array_equal(self.theta, other.theta)


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("sparsity pattern entries must be exactly 0 or 1")
        bits = bits.astype(np.int8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


ContinuousPosterior = GaussianShiftPosterior | DropoutPosterior


# ── Gibbs posterior ──────────────────────────────────────────────────────

def _empirical_vector(space: FiniteHypothesisSpace, sample: SampleSet, loss: BoundedLoss) -> np.ndarray:
    if loss.table is not None:
        table = loss.clipped_table(len(space), loss.table.shape[1])
        return empirical_losses(table, sample)
    return np.array([empirical_loss(loss, h, sample) for h in space.hypotheses])


def gibbs_from_losses(
    space: FiniteHypothesisSpace,
    losses: np.ndarray,
    n: int,
    lambda_: float,
    l_max: float,
    provenance: dict | None = None,
) -> GibbsPosterior:
    """Gibbs posterior for a precomputed loss vector (empirical or true)."""
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    energies = space.log_prior - n * np.asarray(losses, dtype=float) / (lambda_ * l_max)
    log_z = special.logsumexp(energies)
    if not np.isfinite(log_z):
        raise ValueError("prior has empty support")
    return GibbsPosterior(
        space=space,
        lambda_=float(lambda_),
        l_max=float(l_max),
        log_weights=energies - log_z,
        provenance=dict(provenance or {}),
    )


def log_partition(space: FiniteHypothesisSpace, losses: np.ndarray, n: int, lambda_: float, l_max: float) -> float:
    """ln Z_λ = ln Σ_h P(h)·exp(−N·l(h)/(λ·l_max)).

    With true losses in place of empirical ones this is ln Z̈_λ.
    """
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")
    return float(special.logsumexp(space.log_prior - n * np.asarray(losses) / (lambda_ * l_max)))


def gibbs_weights(
    space: FiniteHypothesisSpace, sample: SampleSet, loss: BoundedLoss, lambda_: float
) -> GibbsPosterior:
    return gibbs_from_losses(
        space,
        _empirical_vector(space, sample, loss),
        sample.n,
        lambda_,
        loss.l_max,
        provenance={"l_max": loss.l_max, "n": sample.n},
    )


def gibbs_algorithm(space: FiniteHypothesisSpace, loss: BoundedLoss, lambda_: float):
    """The learning algorithm S ↦ Q_λ(S), returning weight vectors."""
    if not lambda_ > 0:
        raise ValueError(f"lambda must be > 0, got {lambda_}")

    def algorithm(sample: SampleSet) -> np.ndarray:
        return gibbs_weights(space, sample, loss, lambda_).weights

    algorithm.__name__ = f"gibbs_lambda_{lambda_:g}"
    return algorithm


def point_mass(space: FiniteHypothesisSpace, h: int) -> np.ndarray:
    """Posterior putting all mass on hypothesis index ``h``."""
    if not 0 <= h < len(space):
        raise ValueError(f"hypothesis index {h} out of range")
    q = np.zeros(len(space))
    q[h] = 1.0
    return q


def kl_discrete(q, p) -> float:
    """Σ q(h)·ln(q(h)/p(h)); 0·ln 0 = 0 and +inf where q charges a p-null h."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError(f"distributions differ in length: {q.shape} vs {p.shape}")
    for name, v in (("q", q), ("p", p)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"{name} must be a probability vector")
    return float(np.sum(special.rel_entr(q, p)))


def gibbs_objective(posterior: GibbsPosterior, sample: SampleSet, loss: BoundedLoss) -> float:
    """L̂(Q) + (λ·l_max/N)·𝓓(Q, P)."""
    return posterior_objective(
        posterior.weights, posterior.space, _empirical_vector(posterior.space, sample, loss),
        sample.n, posterior.lambda_, loss.l_max,
    )


def posterior_objective(q, space: FiniteHypothesisSpace, l_hat: np.ndarray, n: int, lambda_: float, l_max: float) -> float:
    """The Gibbs objective for an arbitrary weight vector ``q``."""
    q = np.asarray(q, dtype=float)
    return float(q @ l_hat) + (lambda_ * l_max / n) * kl_discrete(q, space.prior)


def select_lambda(
    grid, sample: SampleSet, space: FiniteHypothesisSpace, loss: BoundedLoss, delta: float
) -> tuple[float, GibbsPosterior, BoundReport]:
    """Pick λ from a pre-declared grid by the ln(k/δ) union bound at Q_λ."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    for lam in grid:
        if not lam > 0.5:
            raise ValueError(f"every grid lambda must be > 1/2, got {lam}")

    l_hat = _empirical_vector(space, sample, loss)
    k = len(grid)
    best: tuple[float, GibbsPosterior, BoundReport] | None = None
    for lam in grid:
        q = gibbs_from_losses(space, l_hat, sample.n, lam, loss.l_max)
        report = pac_bayes_bound(float(q.weights @ l_hat), q.kl(), sample.n, delta / k, loss.l_max, lam)
        report.kind = BoundKind.PAC_BAYES_GRID
        report.delta = float(delta)
        if best is None or report.value < best[2].value:
            best = (lam, q, report)
    logger.debug(f"Selected lambda={best[0]:g} from grid of {k} (bound {best[2].value:.6g})")
    return best


# ── Continuous posteriors ────────────────────────────────────────────────

def gaussian_kl(theta) -> float:
    """½‖Θ‖²."""
    theta = _check_theta(theta)
    return 0.5 * float(theta @ theta)


def dropout_kl(posterior: DropoutPosterior) -> float:
    """((1−α)/2)·‖Θ‖²."""
    return (1.0 - posterior.alpha) * 0.5 * float(posterior.theta @ posterior.theta)


def draw_weights(posterior: ContinuousPosterior, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (masks, noise) of shape (n, d); the weight draws are masks∘(Θ + noise).

    Noise is drawn before masks, so α = 0 reproduces the Gaussian draws.
    """
    noise = rng.standard_normal((n, posterior.d))
    if isinstance(posterior, DropoutPosterior):
        masks = (rng.random((n, posterior.d)) >= posterior.alpha).astype(float)
    else:
        masks = np.ones((n, posterior.d))
    return masks, noise


def sample_gaussian(posterior: GaussianShiftPosterior, rng: np.random.Generator) -> np.ndarray:
    return posterior.theta + rng.standard_normal(posterior.d)


def sample_dropout(posterior: DropoutPosterior, rng: np.random.Generator) -> tuple[SparsityPattern, np.ndarray]:
    masks, noise = draw_weights(posterior, 1, rng)
    return SparsityPattern(masks[0].astype(np.int8)), masks[0] * (posterior.theta + noise[0])


def _mc_mean(values: np.ndarray) -> tuple[float, float]:
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def gaussian_kl_mc(theta, n_draws: int, rng: np.random.Generator) -> tuple[float, float]:
    """MC log-density-ratio estimate of 𝓓(Q_Θ, P) with its standard error."""
    return dropout_kl_mc(DropoutPosterior(0.0, theta), n_draws, rng)


def dropout_kl_mc(posterior: DropoutPosterior, n_draws: int, rng: np.random.Generator) -> tuple[float, float]:
    """Average of ½‖s∘(Θ+ε)‖² − ½‖s∘ε‖² over (s, ε) draws, with its standard error."""
    if n_draws < 2:
        raise ValueError(f"n_draws must be >= 2, got {n_draws}")
    values = np.empty(n_draws)
    for start in range(0, n_draws, cfg.MC_CHUNK_SIZE):
        stop = min(start + cfg.MC_CHUNK_SIZE, n_draws)
        masks, noise = draw_weights(posterior, stop - start, rng)
        shifted = masks * (posterior.theta + noise)
        centred = masks * noise
        values[start:stop] = 0.5 * (np.sum(shifted**2, axis=1) - np.sum(centred**2, axis=1))
    return _mc_mean(values)


# ── Serialisation ────────────────────────────────────────────────────────

def posterior_to_dict(posterior) -> dict:
    if isinstance(posterior, GibbsPosterior):
        return {
            "kind": "gibbs",
            "lambda": posterior.lambda_,
            "l_max": posterior.l_max,
            "hypotheses": list(posterior.space.hypotheses),
            "prior": posterior.space.prior.tolist(),
            "log_weights": posterior.log_weights.tolist(),
            "provenance": posterior.provenance,
        }
    if isinstance(posterior, DropoutPosterior):
        return {"kind": "dropout", "alpha": posterior.alpha, "theta": posterior.theta.tolist()}
    if isinstance(posterior, GaussianShiftPosterior):
        return {"kind": "gaussian", "theta": posterior.theta.tolist()}
    raise TypeError(f"Cannot serialise posterior of type {type(posterior).__name__}")


def posterior_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gibbs":
        space = FiniteHypothesisSpace(tuple(d["hypotheses"]), np.array(d["prior"]))
        return GibbsPosterior(
            space=space,
            lambda_=d["lambda"],
            l_max=d["l_max"],
            log_weights=np.array(d["log_weights"]),
            provenance=d.get("provenance", {}),
        )
    if kind == "dropout":
        return DropoutPosterior(d["alpha"], np.array(d["theta"]))
    if kind == "gaussian":
        return GaussianShiftPosterior(np.array(d["theta"]))
    raise KeyError(f"No posterior kind named '{kind}'")
