import struct

import numpy as np
import pytest

from dpfedsim.data import (
    Dataset,
    Partition,
    load_idx,
    partition_iid,
    partition_label_shards,
    synth_classification,
)
from dpfedsim.errors import DataError, FormatError
from dpfedsim.model import ModelSpec, accuracy, loss_and_grad


def _train_centrally(dataset, steps=300, lr=0.5):
    """Full-batch gradient descent on a logistic model; the oracle for
    whether a synthetic task is actually learnable."""
    spec = ModelSpec(
        "logistic", input_dim=dataset.input_dim, num_classes=int(dataset.labels.max()) + 1
    )
    params = np.zeros(spec.param_count)
    for _ in range(steps):
        _, grad = loss_and_grad(spec, params, dataset.features, dataset.labels)
        params -= lr * grad
    return spec, params


def test_separated_blobs_are_centrally_learnable():
    data = synth_classification(3, 500, input_dim=8, num_classes=2, class_sep=10.0)
    spec, params = _train_centrally(data)
    assert accuracy(spec, params, data) >= 0.99


def test_same_seed_reproduces_dataset():
    a = synth_classification(11, 200, 5, 3, 2.0)
    b = synth_classification(11, 200, 5, 3, 2.0)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_zero_separation_is_chance_level():
    train = synth_classification(5, 2000, 5, 4, class_sep=0.0)
    heldout = synth_classification(5, 2000, 5, 4, class_sep=0.0, part=1)
    spec, params = _train_centrally(train, steps=150)
    assert accuracy(spec, params, heldout) == pytest.approx(0.25, abs=0.05)


def test_parts_share_class_means():
    # same seed, different part: same distribution, fresh examples
    a = synth_classification(9, 300, 6, 3, 5.0)
    b = synth_classification(9, 300, 6, 3, 5.0, part=1)
    assert not np.array_equal(a.features, b.features)
    for c in range(3):
        mu_a = a.features[a.labels == c].mean(axis=0)
        mu_b = b.features[b.labels == c].mean(axis=0)
        np.testing.assert_allclose(mu_a, mu_b, atol=0.5)


def _toy(n, num_classes=2):
    rng = np.random.default_rng(0)
    return Dataset(rng.normal(size=(n, 3)), np.arange(n) % num_classes)


def test_iid_partition_exact_division():
    part = partition_iid(_toy(100), 10, 0.0, seed=1)
    assert sorted(len(s) for s in part.shards) == [10] * 10
    assert len(part.public_indices) == 0


def test_iid_partition_remainder_rule():
    part = partition_iid(_toy(101), 10, 0.0, seed=1)
    assert sorted(len(s) for s in part.shards) == [10] * 9 + [11]


def test_iid_partition_public_split_arithmetic():
    part = partition_iid(_toy(1000), 10, 0.1, seed=2)
    assert len(part.public_indices) == 100
    covered = np.concatenate([part.public_indices] + part.shards)
    assert len(covered) == 1000
    assert len(np.unique(covered)) == 1000


def test_partition_deterministic_in_seed():
    a = partition_iid(_toy(100), 7, 0.05, seed=3)
    b = partition_iid(_toy(100), 7, 0.05, seed=3)
    np.testing.assert_array_equal(a.public_indices, b.public_indices)
    for s, t in zip(a.shards, b.shards):
        np.testing.assert_array_equal(s, t)


def test_iid_partition_insufficient_examples():
    with pytest.raises(DataError):
        partition_iid(_toy(5), 10, 0.0, seed=1)


def test_label_shards_single_shard_is_single_label():
    data = _toy(100, num_classes=2)
    part = partition_label_shards(data, 2, 1, 0.0, seed=4)
    for shard in part.shards:
        labels = data.labels[shard]
        # one contiguous label block: at most 2 distinct labels at a boundary
        assert len(np.unique(labels)) <= 2
        counts = np.bincount(labels, minlength=2)
        assert counts.max() / counts.sum() >= 0.9


def test_label_shards_many_shards_approach_global_histogram():
    # shards_per_client at its |D|/n limit: single-example chunks, so each
    # client's label histogram is a uniform subsample of the global one
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(1200, 3)), rng.integers(4, size=1200))
    part = partition_label_shards(data, 4, 300, 0.0, seed=5)
    global_hist = np.bincount(data.labels, minlength=4) / len(data)
    for shard in part.shards:
        hist = np.bincount(data.labels[shard], minlength=4) / len(shard)
        tv = 0.5 * np.abs(hist - global_hist).sum()
        assert tv < 0.1


def test_label_shards_cover_everything_once():
    data = _toy(120, num_classes=3)
    part = partition_label_shards(data, 4, 3, 0.1, seed=6)
    covered = np.concatenate([part.public_indices] + part.shards)
    assert sorted(covered.tolist()) == list(range(120))


def test_partition_type_rejects_overlap():
    with pytest.raises(DataError):
        Partition([np.array([0, 1]), np.array([1, 2])])
    with pytest.raises(DataError):
        Partition([np.array([0, 1]), np.array([], dtype=np.int64)])


def _write_idx_pair(tmp_path, images, labels):
    n, rows, cols = images.shape
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    img_path.write_bytes(
        struct.pack(">IIII", 0x803, n, rows, cols) + images.astype(np.uint8).tobytes()
    )
    lab_path.write_bytes(struct.pack(">II", 0x801, n) + labels.astype(np.uint8).tobytes())
    return str(img_path), str(lab_path)


def test_load_idx_well_formed_pair(tmp_path):
    rng = np.random.default_rng(2)
    images = rng.integers(0, 256, size=(10, 28, 28))
    labels = rng.integers(0, 10, size=10)
    img, lab = _write_idx_pair(tmp_path, images, labels)
    data = load_idx(img, lab)
    assert data.features.shape == (10, 784)
    np.testing.assert_array_equal(data.labels, labels)


def test_load_idx_scales_255_to_one(tmp_path):
    images = np.full((2, 2, 2), 255)
    img, lab = _write_idx_pair(tmp_path, images, np.array([0, 1]))
    data = load_idx(img, lab)
    assert np.all(data.features == 1.0)


def test_load_idx_bad_label_magic(tmp_path):
    images = np.zeros((2, 2, 2))
    img, lab = _write_idx_pair(tmp_path, images, np.array([0, 1]))
    with open(lab, "r+b") as f:
        f.write(struct.pack(">I", 0x9999))
    with pytest.raises(FormatError) as err:
        load_idx(img, lab)
    assert "0x00000801" in str(err.value)


def test_load_idx_truncated_images(tmp_path):
    images = np.zeros((4, 3, 3))
    img, lab = _write_idx_pair(tmp_path, images, np.zeros(4))
    raw = open(img, "rb").read()
    with open(img, "wb") as f:
        f.write(raw[:-5])
    with pytest.raises(FormatError) as err:
        load_idx(img, lab)
    assert err.value.offset == 16


def test_load_idx_count_mismatch(tmp_path):
    images = np.zeros((3, 2, 2))
    img, lab = _write_idx_pair(tmp_path, images, np.zeros(3))
    with open(lab, "r+b") as f:
        f.seek(4)
        f.write(struct.pack(">I", 7))
    with pytest.raises(FormatError):
        load_idx(img, lab)
