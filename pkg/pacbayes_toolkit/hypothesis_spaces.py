"""Finite hypothesis classes, bounded losses, samples and prior code lengths.

Hypotheses and situations of a finite world are referenced by index.  A
``BoundedLoss`` wraps a raw loss ``(h, s) -> float`` and clips it at the
outlier threshold ``l_max``; for finite worlds the clipped loss table
(row per hypothesis, column per situation) is evaluated once and memoised.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


logger = logging.getLogger(__name__)

RawLossFn = Callable[[Any, Any], float]

_PROB_TOL = 1e-12


def _check_distribution(name: str, weights: np.ndarray, tol: float = _PROB_TOL) -> None:
    if weights.ndim != 1 or weights.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError(f"{name} weights must be finite and non-negative")
    if abs(weights.sum() - 1.0) > tol:
        raise ValueError(f"{name} weights must sum to 1, got {weights.sum():.15g}")


# ── Domain types ─────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class BoundedLoss:
    """A raw loss clipped to [0, l_max].

    ``table`` optionally holds raw values for finite worlds (row per
    hypothesis, column per situation index); ``raw_loss`` then reads it.
    """

    l_max: float
    raw_loss: RawLossFn
    table: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        if not self.l_max > 0:
            raise ValueError(f"l_max must be positive, got {self.l_max}")

    @classmethod
    def from_table(cls, table, l_max: float) -> "BoundedLoss":
        arr = np.array(table, dtype=float)
        if arr.ndim != 2:
            raise ValueError("loss table must be 2-d (hypotheses x situations)")
        arr.setflags(write=False)
        return cls(l_max=float(l_max), raw_loss=lambda h, s: float(arr[h, s]), table=arr)

    def __call__(self, h, s) -> float:
        return clip_loss(self, h, s)

    def clipped_table(self, n_hypotheses: int, n_situations: int) -> np.ndarray:
        """Clipped loss for every (h, s) index pair, memoised per shape."""
        key = (n_hypotheses, n_situations)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                return cached
            if self.table is not None:
                raw = self.table[:n_hypotheses, :n_situations]
                if raw.shape != key:
                    raise ValueError(f"loss table has shape {self.table.shape}, need {key}")
            else:
                raw = np.array(
                    [[self.raw_loss(h, s) for s in range(n_situations)] for h in range(n_hypotheses)],
                    dtype=float,
                )
            if np.any(raw < 0):
                raise ValueError("raw loss must be non-negative")
            clipped = np.minimum(raw, self.l_max)
            clipped.setflags(write=False)
            self._cache[key] = clipped
            return clipped


@dataclass(frozen=True, eq=False)
class FiniteHypothesisSpace:
    hypotheses: tuple
    prior: np.ndarray

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        _check_distribution("prior", prior)
        if len(self.hypotheses) != prior.size:
            raise ValueError("one prior weight per hypothesis is required")
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        object.__setattr__(self, "prior", prior)

    @classmethod
    def uniform(cls, n: int) -> "FiniteHypothesisSpace":
        return cls(hypotheses=tuple(range(n)), prior=np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def log_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.prior)

    def prior_nats(self, h: int | None = None):
        """ln(1/P(h)) for one hypothesis, or the whole vector when h is None."""
        nats = -self.log_prior
        return nats if h is None else float(nats[h])

    def __eq__(self, other):
        if not isinstance(other, FiniteHypothesisSpace):
            return NotImplemented
        return self.hypotheses == other.hypotheses and np.array_equal(self.prior, other.prior)


@dataclass(frozen=True, eq=False)
class SampleSet:
    situations: tuple

    def __post_init__(self):
        object.__setattr__(self, "situations", tuple(self.situations))
        if len(self.situations) < 1:
            raise ValueError("a sample needs at least one situation")

    @property
    def n(self) -> int:
        return len(self.situations)

    def __len__(self) -> int:
        return self.n

    def indices(self) -> np.ndarray:
        """Situation indices as an int array (finite worlds only)."""
        return np.asarray(self.situations, dtype=np.int64)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(tuple(self.situations[i] for i in idx))

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return self.situations == other.situations


@dataclass(frozen=True, eq=False)
class FiniteWorld:
    """An exactly enumerable situation distribution D."""

    situation_ids: tuple
    probs: np.ndarray
    seed: int | None = None
    name: str = "world"

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        _check_distribution("situation", probs)
        if len(self.situation_ids) != probs.size:
            raise ValueError("one probability per situation is required")
        object.__setattr__(self, "situation_ids", tuple(self.situation_ids))
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point_mass(cls, n_situations: int, at: int, seed: int | None = None) -> "FiniteWorld":
        probs = np.zeros(n_situations)
        probs[at] = 1.0
        return cls(tuple(range(n_situations)), probs, seed=seed, name=f"point_mass_{at}")

    def __len__(self) -> int:
        return len(self.situation_ids)

    @property
    def n_situations(self) -> int:
        return len(self.situation_ids)

    def __eq__(self, other):
        if not isinstance(other, FiniteWorld):
            return NotImplemented
        return (
            self.situation_ids == other.situation_ids
            and np.array_equal(self.probs, other.probs)
            and self.seed == other.seed
            and self.name == other.name
        )


# ── Loss statistics ──────────────────────────────────────────────────────

def clip_loss(loss: BoundedLoss, h, s) -> float:
    """min(raw_loss(h, s), l_max); negative raw losses are an error."""
    raw = float(loss.raw_loss(h, s))
    if raw < 0:
        raise ValueError(f"raw loss must be non-negative, got {raw} for ({h!r}, {s!r})")
    return min(raw, loss.l_max)


def empirical_loss(loss: BoundedLoss, h, sample: SampleSet) -> float:
    """(1/N) Σ L(h, s) over the sample."""
    return math.fsum(clip_loss(loss, h, s) for s in sample.situations) / sample.n


def empirical_variance(loss: BoundedLoss, h, sample: SampleSet) -> float:
    """Unbiased sample variance of L(h, ·), normaliser 1/(N−1)."""
    if sample.n < 2:
        raise ValueError(f"empirical variance needs N >= 2, got {sample.n}")
    values = [clip_loss(loss, h, s) for s in sample.situations]
    mean = math.fsum(values) / sample.n
    return math.fsum((v - mean) ** 2 for v in values) / (sample.n - 1)


def true_loss_exact(loss: BoundedLoss, h: int, world: FiniteWorld) -> float:
    """Σ_s D(s)·L(h, s) by exact enumeration."""
    return math.fsum(
        float(p) * clip_loss(loss, h, s) for s, p in enumerate(world.probs) if p > 0
    )


def loss_table(loss: BoundedLoss, space: FiniteHypothesisSpace, world: FiniteWorld) -> np.ndarray:
    """Clipped loss table over the world, checked against the enumeration budget."""
    from pacbayes_toolkit.worlds import check_budget

    check_budget(space, world)
    return loss.clipped_table(len(space), world.n_situations)


def empirical_losses(table: np.ndarray, sample: SampleSet) -> np.ndarray:
    """L̂(h) for every hypothesis row of a clipped table."""
    return table[:, sample.indices()].mean(axis=1)


def empirical_variances(table: np.ndarray, sample: SampleSet) -> np.ndarray:
    if sample.n < 2:
        raise ValueError(f"empirical variance needs N >= 2, got {sample.n}")
    return table[:, sample.indices()].var(axis=1, ddof=1)


def true_losses(table: np.ndarray, world: FiniteWorld) -> np.ndarray:
    """L(h) for every hypothesis row of a clipped table."""
    return table @ world.probs


# ── Prior code lengths ───────────────────────────────────────────────────

def dense_prior_nats(d: int, b: int) -> float:
    """ln(1/P(h)) under the uniform prior on 2^{bd} b-bit parameter vectors."""
    if d < 1 or b < 1:
        raise ValueError(f"d and b must be >= 1, got d={d}, b={b}")
    return math.log(2) * b * d


def sparse_prior_nats(d: int, b: int, s: int) -> float:
    """ln d + s·(ln d + b·ln 2): pick s uniformly in 1..d, then s (index, b-bit value) pairs."""
    if d < 1 or b < 1:
        raise ValueError(f"d and b must be >= 1, got d={d}, b={b}")
    if not 1 <= s <= d:
        raise ValueError(f"sparsity s must lie in [1, {d}], got {s}")
    return math.log(d) + s * (math.log(d) + math.log(2) * b)
