import itertools

import numpy as np
import pytest

from dpfedsim.data import Dataset
from dpfedsim.errors import DataError, ParameterError
from dpfedsim.model import LocalOptState, ModelSpec
from dpfedsim.numeric import Purpose, RngStream
from dpfedsim.sparsify import (
    RAND_K,
    TOP_K,
    MaskVector,
    SparsifierKind,
    apply_mask,
    select_randk,
    select_topk_proxy,
    top_abs_indices,
)


def all_masks(d, k):
    """Exhaustive enumeration of the C(d, k) masks; the oracle for every
    expectation over the random sparsifier."""
    for combo in itertools.combinations(range(d), k):
        yield MaskVector(np.array(combo, dtype=np.int64), d)


def test_mask_validation():
    with pytest.raises(ParameterError):
        MaskVector(np.array([1, 1]), 4)  # duplicate
    with pytest.raises(ParameterError):
        MaskVector(np.array([2, 1]), 4)  # unsorted
    with pytest.raises(ParameterError):
        MaskVector(np.array([4]), 4)  # out of range
    with pytest.raises(ParameterError):
        MaskVector(np.array([], dtype=np.int64), 4)  # empty


def test_kind_k_rounding():
    assert SparsifierKind(RAND_K, 1.0).k_for(10) == 10
    assert SparsifierKind(RAND_K, 0.25).k_for(10) == 2  # round(2.5) banker's -> 2
    assert SparsifierKind(TOP_K, 0.001).k_for(100) == 1  # floor would be 0


def test_select_randk_full_mask():
    mask = select_randk(5, 5, RngStream(1, 0, 0, Purpose.MASK))
    np.testing.assert_array_equal(mask.indices, np.arange(5))


def test_select_randk_deterministic():
    a = select_randk(20, 7, RngStream(3, 5, 0, Purpose.MASK))
    b = select_randk(20, 7, RngStream(3, 5, 0, Purpose.MASK))
    np.testing.assert_array_equal(a.indices, b.indices)


def test_select_randk_out_of_range():
    with pytest.raises(ParameterError):
        select_randk(4, 0, RngStream(1))
    with pytest.raises(ParameterError):
        select_randk(4, 5, RngStream(1))


def test_select_randk_uniform_over_subsets():
    # d=4, k=2: six subsets, each should appear with frequency 1/6 +- 0.01
    # (sd of the estimate at 60000 draws is ~0.0015, so this is >6 sigma).
    counts: dict[tuple, int] = {}
    draws = 60000
    for i in range(draws):
        mask = select_randk(4, 2, RngStream(7, round=i, client=0, purpose=Purpose.MASK))
        key = tuple(mask.indices.tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    for c in counts.values():
        assert c / draws == pytest.approx(1 / 6, abs=0.01)


def test_top_abs_indices_magnitude_order():
    mask = top_abs_indices(np.array([3.0, -5.0, 1.0, 0.0]), 2)
    np.testing.assert_array_equal(mask.indices, [0, 1])


def test_top_abs_indices_tie_breaks_low():
    mask = top_abs_indices(np.array([2.0, -2.0, 2.0, -2.0]), 2)
    np.testing.assert_array_equal(mask.indices, [0, 1])


def test_top_abs_indices_full_mask():
    mask = top_abs_indices(np.array([0.0, 1.0, -2.0]), 3)
    np.testing.assert_array_equal(mask.indices, [0, 1, 2])


def test_select_topk_proxy_runs_same_procedure_as_clients():
    spec = ModelSpec("logistic", input_dim=3, num_classes=2)
    rng = np.random.default_rng(0)
    public = Dataset(rng.normal(size=(20, 3)), rng.integers(2, size=20))
    params = rng.normal(size=spec.param_count)
    opt = LocalOptState(learning_rate=0.5, momentum=0.5, batch_size=20, local_steps=3)
    stream = RngStream(9, 4, 0, Purpose.MASK)
    mask = select_topk_proxy(spec, params, public, opt, 3, stream)

    from dpfedsim.model import local_update

    proxy = local_update(spec, params, public, opt, stream)
    np.testing.assert_array_equal(mask.indices, top_abs_indices(proxy, 3).indices)


def test_select_topk_proxy_empty_public():
    spec = ModelSpec("logistic", input_dim=3, num_classes=2)
    empty = Dataset(np.zeros((0, 3)), np.zeros(0, int))
    with pytest.raises(DataError):
        select_topk_proxy(
            spec, np.zeros(spec.param_count), empty, LocalOptState(0.1), 2, RngStream(1)
        )


def test_apply_mask_randk_scales_by_d_over_k():
    mask = MaskVector(np.array([0, 2]), 4)
    out = apply_mask([1.0, 2.0, 3.0, 4.0], mask, SparsifierKind(RAND_K, 0.5))
    np.testing.assert_array_equal(out, [2.0, 0.0, 6.0, 0.0])


def test_apply_mask_topk_copies():
    mask = MaskVector(np.array([0, 2]), 4)
    out = apply_mask([1.0, 2.0, 3.0, 4.0], mask, SparsifierKind(TOP_K, 0.5))
    np.testing.assert_array_equal(out, [1.0, 0.0, 3.0, 0.0])


def test_apply_mask_dimension_mismatch():
    mask = MaskVector(np.array([0, 2]), 4)
    with pytest.raises(ParameterError):
        apply_mask([1.0, 2.0], mask, SparsifierKind(TOP_K, 0.5))


def test_randk_average_over_all_masks_is_identity():
    kind = SparsifierKind(RAND_K, 0.5)
    v = np.array([1.0, 1.0, 1.0, 1.0])
    total = sum(apply_mask(v, m, kind) for m in all_masks(4, 2))
    np.testing.assert_allclose(total / 6, v, atol=1e-12)


@pytest.mark.parametrize("d,k", [(3, 1), (5, 2), (6, 3), (8, 5)])
def test_randk_unbiased_by_enumeration(d, k):
    rng = np.random.default_rng(d * 10 + k)
    v = rng.normal(size=d)
    kind = SparsifierKind(RAND_K, k / d)
    masks = list(all_masks(d, k))
    mean = sum(apply_mask(v, m, kind) for m in masks) / len(masks)
    np.testing.assert_allclose(mean, v, atol=1e-10)


@pytest.mark.parametrize("d,k", [(4, 2), (6, 2), (8, 3)])
def test_randk_variance_identity_by_enumeration(d, k):
    rng = np.random.default_rng(d * 7 + k)
    v = rng.normal(size=d)
    kind = SparsifierKind(RAND_K, k / d)
    masks = list(all_masks(d, k))
    mean_sq = sum(
        float(np.sum((apply_mask(v, m, kind) - v) ** 2)) for m in masks
    ) / len(masks)
    expected = (d / k - 1) * float(np.sum(v * v))
    assert mean_sq == pytest.approx(expected, abs=1e-10 * max(1.0, expected))


@pytest.mark.parametrize("d,k", [(4, 1), (6, 3), (8, 5)])
def test_topk_is_contractive_and_optimal(d, k):
    rng = np.random.default_rng(d + k)
    kind = SparsifierKind(TOP_K, k / d)
    for _ in range(20):
        v = rng.normal(size=d)
        out = apply_mask(v, top_abs_indices(v, k), kind)
        err = float(np.sum((out - v) ** 2))
        assert err <= (1 - k / d) * float(np.sum(v * v)) + 1e-12
        # brute force: no k-sparse copy of v does better
        best = min(
            float(np.sum((apply_mask(v, m, kind) - v) ** 2)) for m in all_masks(d, k)
        )
        assert err == pytest.approx(best, abs=1e-12)


def test_output_sparsity_count():
    rng = np.random.default_rng(3)
    v = rng.normal(size=10)  # continuous, so no zeros on the mask
    mask = select_randk(10, 4, RngStream(1, 0, 0, Purpose.MASK))
    out = apply_mask(v, mask, SparsifierKind(RAND_K, 0.4))
    assert int(np.count_nonzero(out == 0)) == 6
