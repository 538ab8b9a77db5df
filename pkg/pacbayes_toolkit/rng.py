"""Seeded, splittable, counter-based random streams.

Every generator in the toolkit is a ``numpy.random.Generator`` driven by the
Philox4x64 counter-based bit generator.  A single run seed fans out into named
sub-streams::

    rng = stream(seed, "verify", "occam", trial_index)

String names are hashed with SHA-256 (not Python's salted ``hash``) so the
same (seed, names) pair yields the same stream in every process.  Streams
keyed by a trial index do not depend on how many workers run the trials.
"""

import hashlib

import numpy as np

__all__ = ["make_rng", "spawn", "stream", "stream_key"]


def stream_key(name: str | int) -> int:
    """Map a stream name (or non-negative integer) to a 32-bit spawn-key word."""
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError(f"stream index must be non-negative, got {name}")
        return int(name)
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a run seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Named sub-stream of ``seed``; distinct name paths give independent streams."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(stream_key(n) for n in names))
    return np.random.Generator(np.random.Philox(seq))


def spawn(rng: np.random.Generator, k: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``k`` independent child generators."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return rng.spawn(k)
