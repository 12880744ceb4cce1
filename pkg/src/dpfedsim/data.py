"""Dataset generation, IDX ingestion, and partitioning into client shards.

A Partition carves a dataset into one shard per client plus an optional
server-held public split, drawn before the client split so the public
examples never overlap any shard.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .numeric import Purpose, RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix (examples x input_dim) with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise DataError("labels must be 1-D with one entry per feature row")
        if len(self.labels) and self.labels.min() < 0:
            raise DataError("labels must be nonnegative")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])


@dataclass
class Partition:
    """Disjoint per-client index lists plus a public index list."""

    shards: list[np.ndarray]
    public_indices: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )

    def __post_init__(self):
        self.shards = [np.asarray(s, dtype=np.int64) for s in self.shards]
        self.public_indices = np.asarray(self.public_indices, dtype=np.int64)
        seen: set[int] = set(self.public_indices.tolist())
        if len(seen) != len(self.public_indices):
            raise DataError("public indices contain duplicates")
        for i, shard in enumerate(self.shards):
            if len(shard) == 0:
                raise DataError(f"shard {i} is empty")
            ids = set(shard.tolist())
            if len(ids) != len(shard) or ids & seen:
                raise DataError(f"shard {i} overlaps another shard or the public split")
            seen |= ids

    @property
    def n_clients(self) -> int:
        return len(self.shards)


def synth_classification(
    seed: int,
    n_examples: int,
    input_dim: int,
    num_classes: int,
    class_sep: float,
    part: int = 0,
) -> Dataset:
    """Gaussian-blob classification task, deterministic in (seed, part).

    One mean per class is drawn on a sphere of radius class_sep; examples
    are unit-covariance Gaussians around their class mean. The class means
    depend on seed only, so different `part` values give fresh examples
    from the same distribution (e.g. an evaluation split).
    """
    if min(n_examples, input_dim, num_classes) < 1:
        raise ParameterError("n_examples, input_dim, num_classes must be >= 1")
    mean_rng = RngStream(seed, client=0, purpose=Purpose.DATA).generator()
    means = mean_rng.normal(size=(num_classes, input_dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = means / norms * class_sep

    ex_rng = RngStream(seed, round=1 + part, client=0, purpose=Purpose.DATA).generator()
    labels = np.arange(n_examples, dtype=np.int64) % num_classes
    labels = ex_rng.permutation(labels)
    features = means[labels] + ex_rng.normal(size=(n_examples, input_dim))
    return Dataset(features, labels)


def _split_public(n: int, public_fraction: float, rng: np.random.Generator):
    if not 0 <= public_fraction < 1:
        raise ParameterError(f"public_fraction must be in [0, 1), got {public_fraction}")
    n_public = int(round(public_fraction * n))
    order = rng.permutation(n)
    return np.sort(order[:n_public]), order[n_public:]


def partition_iid(
    dataset: Dataset, n_clients: int, public_fraction: float, seed: int
) -> Partition:
    """Uniform public split first, then an even shuffle-split of the rest."""
    if n_clients < 1:
        raise ParameterError("n_clients must be >= 1")
    rng = RngStream(seed, client=0, purpose=Purpose.PARTITION).generator()
    public, rest = _split_public(len(dataset), public_fraction, rng)
    if len(rest) < n_clients:
        raise DataError(
            f"{len(rest)} examples cannot fill {n_clients} nonempty shards"
        )
    shards = [np.sort(s) for s in np.array_split(rng.permutation(rest), n_clients)]
    return Partition(shards, public)


def partition_label_shards(
    dataset: Dataset,
    n_clients: int,
    shards_per_client: int,
    public_fraction: float,
    seed: int,
) -> Partition:
    """Label-sorted sharding: the standard pathological non-IID split.

    Examples are sorted by label, cut into n_clients * shards_per_client
    contiguous chunks, and each client receives shards_per_client chunks
    at random. Small shards_per_client concentrates few labels per client.
    """
    if n_clients < 1 or shards_per_client < 1:
        raise ParameterError("n_clients and shards_per_client must be >= 1")
    rng = RngStream(seed, client=0, purpose=Purpose.PARTITION).generator()
    public, rest = _split_public(len(dataset), public_fraction, rng)
    n_chunks = n_clients * shards_per_client
    if len(rest) < n_chunks:
        raise DataError(f"{len(rest)} examples cannot fill {n_chunks} label shards")
    # Shuffle before the stable label sort so ties are broken randomly but
    # deterministically in the seed.
    rest = rng.permutation(rest)
    rest = rest[np.argsort(dataset.labels[rest], kind="stable")]
    chunks = np.array_split(rest, n_chunks)
    assignment = rng.permutation(n_chunks)
    shards = []
    for c in range(n_clients):
        picks = assignment[c * shards_per_client : (c + 1) * shards_per_client]
        shards.append(np.sort(np.concatenate([chunks[p] for p in picks])))
    return Partition(shards, public)


def _read_exact(f, count: int, offset: int, path: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(
            f"{path}: truncated, expected {count} bytes but found {len(data)}",
            offset,
        )
    return data


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian MNIST convention).

    Pixel bytes are scaled to [0, 1]; byte 255 maps to exactly 1.0.
    """
    with open(images_path, "rb") as f:
        header = _read_exact(f, 16, 0, images_path)
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}",
                0,
            )
        pixels = _read_exact(f, count * rows * cols, 16, images_path)
    with open(labels_path, "rb") as f:
        header = _read_exact(f, 8, 0, labels_path)
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}",
                0,
            )
        if label_count != count:
            raise FormatError(
                f"{labels_path}: {label_count} labels but {count} images",
                4,
            )
        raw_labels = _read_exact(f, count, 8, labels_path)
    features = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(features, labels)
