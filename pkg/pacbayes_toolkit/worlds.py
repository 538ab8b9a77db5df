"""Synthetic finite worlds: generation, sampling, exact enumeration and JSON I/O.

A world bundles the situation distribution D (``FiniteWorld``), a finite
hypothesis space with its prior, and the loss table.  Everything downstream
that needs exact true losses goes through ``loss_table``.
"""

import itertools
import logging
import math
from typing import Iterator

import numpy as np

from pacbayes_toolkit import config as cfg
from pacbayes_toolkit.hypothesis_spaces import (
    BoundedLoss,
    FiniteHypothesisSpace,
    FiniteWorld,
    SampleSet,
)
from pacbayes_toolkit.results import read_json, write_json

logger = logging.getLogger(__name__)

__all__ = [
    "EnumerationBudgetError",
    "FiniteWorld",
    "check_budget",
    "draw_sample",
    "enumerate_samples",
    "load_world",
    "random_world",
    "rare_outlier_world",
    "save_world",
    "world_from_dict",
    "world_to_dict",
]


class EnumerationBudgetError(ValueError):
    """An exact enumeration would exceed the configured budget."""


def check_budget(space: FiniteHypothesisSpace, world: FiniteWorld) -> None:
    cells = len(space) * world.n_situations
    if cells > cfg.MAX_ENUMERATION_CELLS:
        raise EnumerationBudgetError(
            f"world has {cells} (hypothesis, situation) cells, budget is {cfg.MAX_ENUMERATION_CELLS}"
        )


# ── Generators ───────────────────────────────────────────────────────────

def random_world(
    rng: np.random.Generator,
    n_hypotheses: int | None = None,
    n_situations: int | None = None,
    *,
    l_max: float | None = None,
    concentration: float | None = None,
    losses: str = "binary",
    prior: str = "uniform",
    seed: int | None = None,
) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    """Random (world, space, loss) at desk scale.

    ``losses="binary"`` gives 0/l_max losses with a per-hypothesis error
    rate drawn uniformly; ``"uniform"`` gives losses uniform on [0, l_max].
    ``prior`` is ``"uniform"`` or ``"dirichlet"``.
    """
    defaults = cfg.WORLD_DEFAULTS
    n_hypotheses = n_hypotheses or defaults["n_hypotheses"]
    n_situations = n_situations or defaults["n_situations"]
    l_max = l_max or defaults["l_max"]
    concentration = concentration or defaults["dirichlet_concentration"]

    probs = rng.dirichlet(np.full(n_situations, concentration))
    probs = probs / probs.sum()
    if losses == "binary":
        rates = rng.random(n_hypotheses)
        table = (rng.random((n_hypotheses, n_situations)) < rates[:, None]) * l_max
    elif losses == "uniform":
        table = rng.random((n_hypotheses, n_situations)) * l_max
    else:
        raise KeyError(f"No loss generator named '{losses}'")

    if prior == "uniform":
        space = FiniteHypothesisSpace.uniform(n_hypotheses)
    elif prior == "dirichlet":
        weights = rng.dirichlet(np.ones(n_hypotheses))
        space = FiniteHypothesisSpace(tuple(range(n_hypotheses)), weights / weights.sum())
    else:
        raise KeyError(f"No prior generator named '{prior}'")

    world = FiniteWorld(tuple(range(n_situations)), probs, seed=seed, name="random")
    loss = BoundedLoss.from_table(table, l_max)
    check_budget(space, world)
    return world, space, loss


def rare_outlier_world(
    rng: np.random.Generator,
    n_hypotheses: int = 20,
    n_situations: int = 10,
    outlier_prob: float = 0.01,
    seed: int | None = None,
) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    """World where situation 0 is rare and half the hypotheses only fail there.

    Hypothesis 0 has constant loss 0; odd hypotheses lose l_max = 1 exactly on
    the rare situation; the rest have random 0-1 losses.
    """
    if not 0 < outlier_prob < 1:
        raise ValueError(f"outlier_prob must lie in (0, 1), got {outlier_prob}")
    probs = np.full(n_situations, (1.0 - outlier_prob) / (n_situations - 1))
    probs[0] = outlier_prob
    table = (rng.random((n_hypotheses, n_situations)) < 0.5).astype(float)
    table[0] = 0.0
    table[1::2] = 0.0
    table[1::2, 0] = 1.0
    world = FiniteWorld(tuple(range(n_situations)), probs / probs.sum(), seed=seed, name="rare_outlier")
    return world, FiniteHypothesisSpace.uniform(n_hypotheses), BoundedLoss.from_table(table, 1.0)


# ── Sampling and enumeration ─────────────────────────────────────────────

def draw_sample(world: FiniteWorld, n: int, rng: np.random.Generator) -> SampleSet:
    """N IID situation indices from D."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return SampleSet(tuple(int(s) for s in rng.choice(world.n_situations, size=n, p=world.probs)))


def draw_indices(world: FiniteWorld, n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """m samples of size n at once, shape (m, n)."""
    return rng.choice(world.n_situations, size=(m, n), p=world.probs)


def enumerate_samples(world: FiniteWorld, n: int) -> Iterator[tuple[SampleSet, float]]:
    """Every ordered sample of size n over the support of D, with its probability."""
    support = [s for s, p in enumerate(world.probs) if p > 0]
    count = len(support) ** n
    if count > cfg.MAX_EXACT_SAMPLES:
        raise EnumerationBudgetError(
            f"{len(support)}^{n} = {count} samples exceeds budget {cfg.MAX_EXACT_SAMPLES}"
        )
    for seq in itertools.product(support, repeat=n):
        yield SampleSet(seq), math.prod(float(world.probs[s]) for s in seq)


# ── JSON layout ──────────────────────────────────────────────────────────

def world_to_dict(world: FiniteWorld, space: FiniteHypothesisSpace, loss: BoundedLoss) -> dict:
    table = loss.clipped_table(len(space), world.n_situations)
    return {
        "name": world.name,
        "seed": world.seed,
        "l_max": loss.l_max,
        "situations": {"ids": list(world.situation_ids), "probs": world.probs.tolist()},
        "hypotheses": {"ids": list(space.hypotheses), "prior": space.prior.tolist()},
        "loss": table.tolist(),
    }


def world_from_dict(d: dict) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    situations = d["situations"]
    hypotheses = d["hypotheses"]
    l_max = float(d["l_max"])
    table = np.array(d["loss"], dtype=float)
    if table.shape != (len(hypotheses["ids"]), len(situations["ids"])):
        raise ValueError(
            f"loss matrix shape {table.shape} does not match "
            f"{len(hypotheses['ids'])} hypotheses x {len(situations['ids'])} situations"
        )
    if np.any(table < 0) or np.any(table > l_max):
        raise ValueError(f"loss matrix values must lie in [0, {l_max}]")
    world = FiniteWorld(
        tuple(situations["ids"]), np.array(situations["probs"]), seed=d.get("seed"), name=d.get("name", "world")
    )
    space = FiniteHypothesisSpace(tuple(hypotheses["ids"]), np.array(hypotheses["prior"]))
    check_budget(space, world)
    return world, space, BoundedLoss.from_table(table, l_max)


def save_world(path: str, world: FiniteWorld, space: FiniteHypothesisSpace, loss: BoundedLoss) -> None:
    write_json(path, world_to_dict(world, space, loss))
    logger.info(f"Saved world '{world.name}' ({len(space)} hypotheses, {world.n_situations} situations) to {path}")


def load_world(path: str) -> tuple[FiniteWorld, FiniteHypothesisSpace, BoundedLoss]:
    return world_from_dict(read_json(path))
