"""Scale-invariant linear classifiers with stochastic losses and MC gradients.

Both models depend on the weight vector only through its direction.

* ``LinearBinaryModel``: h_ω(x) = sign(ω⊺Φ(x)).  Under Q_Θ the 0-1 loss has
  the closed form P(ε > yΘ⊺Φ(x)/‖Φ(x)‖).
* ``MulticlassModel``: cosine scores h_ω(x, ŷ) = ω⊺Φ(x,ŷ)/(‖ω‖‖Φ(x,ŷ)‖), a
  softmax at inverse temperature β over the (small, enumerable) label set,
  and the expected task loss under it.

A draw with ω = 0 (every coordinate dropped) has no direction.  It is
given the uniform softmax over labels and a zero gradient.

Data are ``SampleSet``s of (x, y) pairs.  Models precompute unit feature
tensors once per sample via ``prepare``; every function accepts either the
sample or its prepared form.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator

import numpy as np
from scipy import special, stats

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.divergence import std_normal_tail
from pacbayes_toolkit.hypothesis_spaces import SampleSet
from pacbayes_toolkit.posteriors import ContinuousPosterior, draw_weights

logger = logging.getLogger(__name__)


# ── Feature maps and task losses ─────────────────────────────────────────

def identity_features(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def signed_feature_map(x, y) -> np.ndarray:
    """Φ(x, ŷ) = ŷ·x for labels in {−1, +1}."""
    return float(y) * np.asarray(x, dtype=float)


def block_feature_map(label_set):
    """Φ(x, ŷ) = e_ŷ ⊗ x: one copy of x per label, zeros elsewhere."""
    index = {label: i for i, label in enumerate(label_set)}
    k = len(index)

    def feature_map(x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(k * x.size)
        i = index[y]
        out[i * x.size:(i + 1) * x.size] = x
        return out

    return feature_map


def zero_one_task_loss(y_pred, y) -> float:
    return 0.0 if y_pred == y else 1.0


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("feature vectors must be finite and non-zero")
    return v / norm


# ── Models ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PreparedData:
    """Unit feature tensors for a fixed sample.

    Binary: ``units`` is (N, d) and ``labels`` holds ±1.
    Multiclass: ``units`` is (N, K, d) and ``task`` is (N, K) with L̃(ŷ_k, y_i).
    """

    units: np.ndarray
    labels: np.ndarray | None = None
    task: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.units.shape[0]

    def take(self, idx) -> "PreparedData":
        return PreparedData(
            units=self.units[idx],
            labels=None if self.labels is None else self.labels[idx],
            task=None if self.task is None else self.task[idx],
        )


@dataclass(frozen=True, eq=False)
class LinearBinaryModel:
    feature_map: Callable[[Any], np.ndarray] = identity_features
    l_max: float = 1.0

    def prepare(self, data: SampleSet) -> PreparedData:
        units = np.array([_unit(self.feature_map(x)) for x, _ in data.situations])
        labels = np.array([float(y) for _, y in data.situations])
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("binary labels must be -1 or +1")
        return PreparedData(units=units, labels=labels)


@dataclass(frozen=True, eq=False)
class MulticlassModel:
    feature_map: Callable[[Any, Any], np.ndarray]
    label_set: tuple
    beta: float
    task_loss: Callable[[Any, Any], float] = zero_one_task_loss
    l_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if len(self.label_set) < 1:
            raise ValueError("label set must be non-empty")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    def task_row(self, y) -> np.ndarray:
        row = np.array([self.task_loss(y_pred, y) for y_pred in self.label_set], dtype=float)
        if np.any(row < 0) or np.any(row > self.l_max):
            raise ValueError(f"task losses must lie in [0, {self.l_max}]")
        return row

    def unit_features(self, x) -> np.ndarray:
        return np.array([_unit(self.feature_map(x, y_pred)) for y_pred in self.label_set])

    def prepare(self, data: SampleSet) -> PreparedData:
        units = np.array([self.unit_features(x) for x, _ in data.situations])
        task = np.array([self.task_row(y) for _, y in data.situations])
        return PreparedData(units=units, task=task)


Model = LinearBinaryModel | MulticlassModel


def prepare_data(model: Model, data) -> PreparedData:
    return data if isinstance(data, PreparedData) else model.prepare(data)


# ── Binary closed forms ──────────────────────────────────────────────────

def binary_margin(theta, x, y, feature_map=identity_features) -> float:
    """y·Θ⊺Φ(x)/‖Φ(x)‖."""
    return float(y) * float(np.asarray(theta, dtype=float) @ _unit(feature_map(x)))


def binary_stochastic_loss(theta, x, y, feature_map=identity_features) -> float:
    """Exact 0-1 loss of Q_Θ at (x, y): P(ε > normalised margin)."""
    return float(std_normal_tail(binary_margin(theta, x, y, feature_map)))


def binary_stochastic_loss_grad(theta, x, y, feature_map=identity_features) -> np.ndarray:
    """∇Θ of ``binary_stochastic_loss``: −φ(m)·y·Φ(x)/‖Φ(x)‖."""
    u = _unit(feature_map(x))
    m = float(y) * float(np.asarray(theta, dtype=float) @ u)
    return -stats.norm.pdf(m) * float(y) * u


def binary_empirical_stochastic_loss(theta, data, model: LinearBinaryModel) -> float:
    """Mean closed-form stochastic loss over a sample."""
    prep = prepare_data(model, data)
    margins = prep.labels * (prep.units @ np.asarray(theta, dtype=float))
    return float(np.mean(special.ndtr(-margins)))


def binary_empirical_stochastic_grad(theta, data, model: LinearBinaryModel) -> np.ndarray:
    prep = prepare_data(model, data)
    margins = prep.labels * (prep.units @ np.asarray(theta, dtype=float))
    coeff = -stats.norm.pdf(margins) * prep.labels
    return coeff @ prep.units / prep.n


# ── Multiclass softmax loss ──────────────────────────────────────────────

def class_probabilities(omega, x, model: MulticlassModel) -> np.ndarray:
    """P_{β,ω}(ŷ | x) over the label set."""
    omega = np.asarray(omega, dtype=float)
    norm = np.linalg.norm(omega)
    if norm == 0:
        raise ValueError("omega must be non-zero (cosine score undefined)")
    scores = model.unit_features(x) @ omega / norm
    return special.softmax(model.beta * scores)


def multiclass_loss(omega, x, y, model: MulticlassModel) -> float:
    """L_β(ω, (x, y)) = E_{ŷ ~ P_{β,ω}(·|x)} L̃(ŷ, y) by exact enumeration."""
    return float(class_probabilities(omega, x, model) @ model.task_row(y))


def _batch_scores(weights: np.ndarray, prep: PreparedData) -> tuple[np.ndarray, np.ndarray]:
    """Cosine scores (M, N, K) and weight norms (M,); ω = 0 rows score 0."""
    norms = np.linalg.norm(weights, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    scores = np.einsum("md,nkd->mnk", weights / safe[:, None], prep.units)
    return scores, norms


def _per_draw_losses(weights: np.ndarray, prep: PreparedData, model: Model) -> np.ndarray:
    """Empirical loss of each weight draw, shape (M,)."""
    if isinstance(model, LinearBinaryModel):
        margins = (weights @ prep.units.T) * prep.labels
        return np.mean(margins <= 0, axis=1).astype(float)
    scores, _ = _batch_scores(weights, prep)
    probs = special.softmax(model.beta * scores, axis=2)
    return np.mean(np.sum(probs * prep.task, axis=2), axis=1)


def _per_draw_grads(weights: np.ndarray, prep: PreparedData, model: MulticlassModel) -> np.ndarray:
    """∇ω of each draw's empirical loss, shape (M, d); zero for ω = 0."""
    scores, norms = _batch_scores(weights, prep)
    probs = special.softmax(model.beta * scores, axis=2)
    losses = np.sum(probs * prep.task, axis=2, keepdims=True)
    dscore = model.beta * probs * (prep.task - losses)  # ∂L_i/∂h_ik
    along_units = np.einsum("mnk,nkd->md", dscore, prep.units)
    along_omega = np.einsum("mnk,mnk->m", dscore, scores)
    safe = np.where(norms > 0, norms, 1.0)
    unit_omega = weights / safe[:, None]
    grads = (along_units - along_omega[:, None] * unit_omega) / safe[:, None] / prep.n
    grads[norms == 0] = 0.0
    return grads


# ── Monte-Carlo posterior loss and gradient ──────────────────────────────

def _draw_chunks(
    posterior: ContinuousPosterior, n_mc: int, rng: np.random.Generator
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (masks, weights) chunks; identical rng use for loss and gradient."""
    for start in range(0, n_mc, cfg.MC_CHUNK_SIZE):
        size = min(cfg.MC_CHUNK_SIZE, n_mc - start)
        masks, noise = draw_weights(posterior, size, rng)
        yield masks, masks * (posterior.theta + noise)


def mc_posterior_loss(
    posterior: ContinuousPosterior, data, model: Model, n_mc: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean empirical loss over ``n_mc`` posterior draws and its standard error."""
    if n_mc < 2:
        raise ValueError(f"n_mc must be >= 2, got {n_mc}")
    prep = prepare_data(model, data)
    values = np.concatenate(
        [_per_draw_losses(weights, prep, model) for _, weights in _draw_chunks(posterior, n_mc, rng)]
    )
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_mc))


def mc_gradient(
    posterior: ContinuousPosterior, data, model: Model, n_mc: int, rng: np.random.Generator
) -> np.ndarray:
    """MC estimate of ∇Θ L̂(Q), routed through the dropout mask for dropout posteriors."""
    if isinstance(model, LinearBinaryModel):
        raise ValueError("the binary 0-1 loss is not differentiable; use binary_empirical_stochastic_grad")
    if n_mc < 1:
        raise ValueError(f"n_mc must be >= 1, got {n_mc}")
    prep = prepare_data(model, data)
    total = np.zeros(posterior.d)
    for masks, weights in _draw_chunks(posterior, n_mc, rng):
        total += np.sum(masks * _per_draw_grads(weights, prep, model), axis=0)
    return total / n_mc


# ── Deterministic rule ───────────────────────────────────────────────────

def deterministic_rule_loss(theta, data, model: Model) -> float:
    """Empirical loss of the mean rule h_Θ (not certified by any bound)."""
    prep = prepare_data(model, data)
    theta = np.asarray(theta, dtype=float)
    if isinstance(model, LinearBinaryModel):
        return float(np.mean(prep.labels * (prep.units @ theta) <= 0))
    scores = prep.units @ theta
    picked = np.argmax(scores, axis=1)
    return float(np.mean(prep.task[np.arange(prep.n), picked]))


# ── Synthetic datasets ───────────────────────────────────────────────────

def separable_toy_dataset(n: int, rng: np.random.Generator, margin: float = 0.2) -> SampleSet:
    """n points in 2-d, labelled ±1 by the sign of x₁, with |x₁| ≥ margin."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    labels = np.where(rng.random(n) < 0.5, -1, 1)
    x1 = labels * (margin + rng.random(n))
    x2 = rng.uniform(-1.0, 1.0, n)
    return SampleSet(tuple((np.array([a, b]), int(y)) for a, b, y in zip(x1, x2, labels)))


def dataset_from_dict(d: dict) -> tuple[SampleSet, Model]:
    """Build (sample, model) from the dataset JSON layout.

    Keys: ``instances`` (list of {"x": [...], "y": label}), optional
    ``labels`` + ``task_loss`` matrix (row per predicted label, column per
    true label) + ``beta`` + ``feature_map`` ("signed" or "block") for the
    multiclass model, and ``l_max``.
    """
    data = SampleSet(tuple((np.array(inst["x"], dtype=float), inst["y"]) for inst in d["instances"]))
    l_max = float(d.get("l_max", 1.0))
    if "labels" not in d:
        return data, LinearBinaryModel(l_max=l_max)

    labels = tuple(d["labels"])
    if "task_loss" in d:
        matrix = np.array(d["task_loss"], dtype=float)
        index = {label: i for i, label in enumerate(labels)}

        def task_loss(y_pred, y):
            return float(matrix[index[y_pred], index[y]])
    else:
        task_loss = zero_one_task_loss

    kind = d.get("feature_map", "signed" if set(labels) == {-1, 1} else "block")
    if kind == "signed":
        feature_map = signed_feature_map
    elif kind == "block":
        feature_map = block_feature_map(labels)
    else:
        raise KeyError(f"No feature map named '{kind}'")
    model = MulticlassModel(feature_map, labels, float(d.get("beta", 1.0)), task_loss, l_max)
    return data, model


def dataset_to_dict(data: SampleSet, labels=None, beta: float | None = None, l_max: float = 1.0) -> dict:
    d = {
        "instances": [{"x": np.asarray(x).tolist(), "y": y} for x, y in data.situations],
        "l_max": l_max,
    }
    if labels is not None:
        d["labels"] = list(labels)
        d["beta"] = beta
    return d
