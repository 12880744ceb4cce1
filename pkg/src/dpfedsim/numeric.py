"""Deterministic numeric primitives: vector arithmetic, L2 clipping, seeded Gaussian noise.

All vectors are flat float64 numpy arrays. Randomness is drawn from
counter-based Philox streams keyed by (master seed, round, client, purpose),
so every consumer of randomness in the simulator owns an independent,
replayable stream and no draw-order coupling exists between components.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ParameterError


class Purpose(IntEnum):
    """Sub-stream selector; one value per independent consumer of randomness."""

    INIT = 0
    CLIENT_SAMPLING = 1
    MASK = 2
    BATCH = 3
    NOISE = 4
    PAIRWISE = 5
    DATA = 6
    PARTITION = 7


@dataclass(frozen=True)
class RngStream:
    """Replayable random stream keyed by (seed, round, client, purpose).

    Identical keys yield identical sample sequences across runs; distinct
    keys yield independent streams.
    """

    seed: int
    round: int = 0
    client: int = 0
    purpose: int = Purpose.INIT

    def __post_init__(self):
        for name in ("seed", "round", "client", "purpose"):
            if int(getattr(self, name)) < 0:
                raise ParameterError(f"RngStream.{name} must be nonnegative")

    def generator(self) -> np.random.Generator:
        key = (int(self.seed), int(self.round), int(self.client), int(self.purpose))
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def as_vector(v) -> np.ndarray:
    """Coerce to a flat float64 array without copying when already one."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        a = a.reshape(-1)
    return a


def l2_norm(v) -> float:
    """Euclidean norm of a flat vector."""
    return float(np.linalg.norm(as_vector(v)))


def clip_l2(v, clip: float) -> np.ndarray:
    """Scale v by min(1, clip/||v||2) so the result has L2 norm <= clip.

    The zero vector is returned unchanged (the scaling factor is defined
    as 1 in the zero-norm limit). The result is an exact fixed point:
    clip_l2(clip_l2(v, c), c) is bitwise equal to clip_l2(v, c).
    """
    if not clip > 0:
        raise ParameterError(f"clip threshold must be > 0, got {clip}")
    u = as_vector(v)
    norm = float(np.linalg.norm(u))
    if norm <= clip:
        return u.copy()
    u = u * (clip / norm)
    # One multiply can leave the float norm a few ulp above the threshold;
    # iterate until the computed norm is <= clip or the bits stop changing.
    while True:
        norm = float(np.linalg.norm(u))
        if norm <= clip:
            break
        shrunk = u * (clip / norm)
        if np.array_equal(shrunk, u):
            break
        u = shrunk
    return u


def gaussian_sample(stream: RngStream, std: float, count: int) -> np.ndarray:
    """Draw `count` iid samples from N(0, std^2); std=0 yields exact zeros."""
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.zeros(count, dtype=np.float64)
    return stream.generator().normal(0.0, std, size=count)
