"""Mask selection and application for sparsified model updates.

A round's mask is selected once by the server (uniformly at random, or from
the top coordinates of a proxy update trained on the public dataset) and
shared by every participating client, so all sparsified updates live on the
same k coordinates and can be summed coordinate-by-coordinate downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DataError, ParameterError
from .model import LocalOptState, ModelSpec, local_update
from .numeric import RngStream, as_vector

RAND_K = "rand_k"
TOP_K = "top_k"


@dataclass(frozen=True)
class MaskVector:
    """Sorted, duplicate-free coordinate subset of a length-d vector."""

    indices: np.ndarray
    d: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or not 1 <= len(idx) <= self.d:
            raise ParameterError(f"mask must hold between 1 and {self.d} indices")
        if np.any(np.diff(idx) <= 0):
            raise ParameterError("mask indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.d:
            raise ParameterError(f"mask indices must lie in [0, {self.d})")

    @property
    def k(self) -> int:
        return len(self.indices)

    def indicator(self) -> np.ndarray:
        m = np.zeros(self.d, dtype=np.float64)
        m[self.indices] = 1.0
        return m


@dataclass(frozen=True)
class SparsifierKind:
    """Sparsifier family plus its compression ratio p = k/d."""

    kind: str
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in (RAND_K, TOP_K):
            raise ParameterError(f"unknown sparsifier kind '{self.kind}'")
        if not 0 < self.p <= 1:
            raise ParameterError(f"compression ratio must be in (0, 1], got {self.p}")

    def k_for(self, d: int) -> int:
        # Guarantees a nonempty mask even for tiny ratios.
        return max(1, int(round(self.p * d)))


def select_randk(d: int, k: int, stream: RngStream) -> MaskVector:
    """Uniform random size-k coordinate subset, deterministic in the stream."""
    if not 1 <= k <= d:
        raise ParameterError(f"k must be in [1, {d}], got {k}")
    if k == d:
        return MaskVector(np.arange(d, dtype=np.int64), d)
    idx = stream.generator().choice(d, size=k, replace=False)
    return MaskVector(np.sort(idx), d)


def top_abs_indices(v: np.ndarray, k: int) -> MaskVector:
    """Indices of the k largest-magnitude entries; ties go to lower indices."""
    v = as_vector(v)
    d = len(v)
    if not 1 <= k <= d:
        raise ParameterError(f"k must be in [1, {d}], got {k}")
    order = np.argsort(-np.abs(v), kind="stable")
    return MaskVector(np.sort(order[:k]), d)


def select_topk_proxy(
    spec: ModelSpec,
    global_params: np.ndarray,
    public_data: Dataset,
    opt: LocalOptState,
    k: int,
    stream: RngStream,
) -> MaskVector:
    """Top-k mask from a proxy update trained on the server's public dataset.

    The server runs the same local-update procedure as the clients (same
    optimizer settings and local period) starting from the global model and
    keeps the k largest-magnitude coordinates of the resulting update.
    """
    if len(public_data) == 0:
        raise DataError("public dataset is empty")
    proxy_update = local_update(spec, global_params, public_data, opt, stream)
    return top_abs_indices(proxy_update, k)


def apply_mask(update: np.ndarray, mask: MaskVector, kind: SparsifierKind) -> np.ndarray:
    """Zero all coordinates outside the mask.

    rand_k scales kept entries by d/k so the sparsified update is an
    unbiased estimate of the dense one; top_k copies them unchanged.
    """
    u = as_vector(update)
    if len(u) != mask.d:
        raise ParameterError(f"update length {len(u)} != mask dimension {mask.d}")
    out = np.zeros_like(u)
    if kind.kind == RAND_K:
        out[mask.indices] = u[mask.indices] * (mask.d / mask.k)
    else:
        out[mask.indices] = u[mask.indices]
    return out
