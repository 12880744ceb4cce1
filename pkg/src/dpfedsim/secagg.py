"""Simulated secure aggregation: fixed-point encoding plus pairwise zero-sum
masking over integers mod 2^modulus_bits.

Every ordered client pair (i < j) shares a deterministic mask stream; i adds
the draw and j subtracts it, so the modular sum over all submissions equals
the sum of the unmasked encodings exactly while each individual submission
is uniform on the residue ring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ProtocolError
from .numeric import Purpose, as_vector


@dataclass(frozen=True)
class FixedPointCodec:
    """Fixed-point codec: scale by 2^scale_bits, reduce mod 2^modulus_bits.

    Inputs are clamped to [-clamp_range, clamp_range] before encoding; sums
    of up to max_clients() encodings are guaranteed not to wrap.
    """

    scale_bits: int = 20
    modulus_bits: int = 64
    clamp_range: float = 2.0**20

    def __post_init__(self):
        if not 1 <= self.modulus_bits <= 64:
            raise ParameterError("modulus_bits must be in [1, 64]")
        if self.scale_bits < 1 or self.clamp_range <= 0:
            raise ParameterError("scale_bits must be >= 1 and clamp_range > 0")
        if self.clamp_range * 2.0**self.scale_bits >= 2.0 ** (self.modulus_bits - 1):
            raise ParameterError("clamp_range * 2^scale_bits must fit in signed range")

    @property
    def scale(self) -> float:
        return 2.0**self.scale_bits

    @property
    def quantum(self) -> float:
        """Worst-case rounding error of a single encoded coordinate."""
        return 2.0 ** -(self.scale_bits + 1)

    def max_clients(self) -> int:
        """Largest sum size that cannot wrap the signed residue range."""
        return int(2.0 ** (self.modulus_bits - 1) / (self.clamp_range * self.scale))

    def _reduce(self, residues: np.ndarray) -> np.ndarray:
        if self.modulus_bits == 64:
            return residues
        mask = np.uint64((1 << self.modulus_bits) - 1)
        return residues & mask

    def encode(self, v) -> np.ndarray:
        """round(clamp(v) * 2^scale_bits) mod 2^modulus_bits as uint64."""
        u = np.clip(as_vector(v), -self.clamp_range, self.clamp_range)
        ints = np.rint(u * self.scale).astype(np.int64)
        return self._reduce(ints.view(np.uint64))

    def saturation_count(self, v) -> int:
        """How many coordinates the encoder clamped."""
        u = as_vector(v)
        return int(np.count_nonzero(np.abs(u) > self.clamp_range))

    def _recenter(self, residues: np.ndarray) -> np.ndarray:
        if self.modulus_bits == 64:
            return residues.view(np.int64)
        signed = residues.astype(np.int64)
        half = np.int64(1 << (self.modulus_bits - 1))
        return np.where(signed >= half, signed - np.int64(1 << self.modulus_bits), signed)

    def decode(self, residues: np.ndarray) -> np.ndarray:
        """Recenter residues to the signed range and undo the scaling."""
        return self._recenter(np.asarray(residues, dtype=np.uint64)) / self.scale


@dataclass(frozen=True)
class MaskedUpdate:
    """One client's masked fixed-point submission."""

    residues: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.residues, dtype=np.uint64)
        object.__setattr__(self, "residues", r)
        if r.ndim != 1:
            raise ParameterError("residues must be a flat array")


def _pair_generator(master_seed: int, round_index: int, i: int, j: int):
    key = (int(master_seed), int(round_index), int(Purpose.PAIRWISE), int(i), int(j))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def make_pairwise_masks(
    client_ids,
    d: int,
    round_index: int,
    master_seed: int,
    codec: FixedPointCodec = FixedPointCodec(),
) -> dict[int, np.ndarray]:
    """Zero-sum additive masks for every client in the round.

    For each ordered pair (i < j), a shared stream draws a uniform vector;
    i adds it and j subtracts it mod 2^modulus_bits, so the coordinatewise
    modular sum over all returned masks is exactly zero.
    """
    ids = sorted(int(c) for c in client_ids)
    if len(ids) != len(set(ids)):
        raise ParameterError("client ids must be distinct")
    if len(ids) < 2:
        raise ParameterError("pairwise masking needs at least 2 clients")
    if d < 1:
        raise ParameterError("d must be >= 1")
    masks = {c: np.zeros(d, dtype=np.uint64) for c in ids}
    for a, i in enumerate(ids):
        for j in ids[a + 1 :]:
            rng = _pair_generator(master_seed, round_index, i, j)
            if codec.modulus_bits == 64:
                u = rng.integers(0, 2**64 - 1, size=d, dtype=np.uint64, endpoint=True)
            else:
                u = rng.integers(0, 2**codec.modulus_bits, size=d, dtype=np.uint64)
            masks[i] = codec._reduce(masks[i] + u)
            masks[j] = codec._reduce(masks[j] - u)
    return masks


def mask_update(encoded: np.ndarray, mask: np.ndarray, codec: FixedPointCodec) -> MaskedUpdate:
    return MaskedUpdate(codec._reduce(np.asarray(encoded, np.uint64) + mask))


def aggregate(masked: list[MaskedUpdate], codec: FixedPointCodec) -> np.ndarray:
    """Modular sum of submissions, recentered and rescaled to reals.

    With zero-sum masks the result equals the sum of the clients' clamped
    real vectors to within len(masked) * 2^-(scale_bits+1) per coordinate.
    """
    if not masked:
        raise ProtocolError("no submissions to aggregate")
    lengths = {len(m.residues) for m in masked}
    if len(lengths) != 1:
        raise ProtocolError(f"inconsistent submission lengths: {sorted(lengths)}")
    total = np.zeros(lengths.pop(), dtype=np.uint64)
    for m in masked:
        total = codec._reduce(total + m.residues)
    return codec.decode(total)
