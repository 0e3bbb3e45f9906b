import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from utils.prob_core import (
    FiniteDistribution,
    JointDistribution,
    SupportError,
    SynsetPartition,
    ValidationError,
    block_distribution,
    conditional_entropy_given_blocks,
    detail_self_information,
    entropy,
    kl_divergence,
    mutual_information,
    partial_semantic_kl,
    semantic_entropy,
    semantic_self_information,
    single_side_semantic_mi,
    total_variation,
    within_block_conditional,
)

H_B_075 = 0.8112781244591328


# ── distributions ───────────────────────────────────────────

def test_distribution_rejects_bad_mass():
    with pytest.raises(ValidationError) as err:
        FiniteDistribution.from_list([0.5, -0.1, 0.6])
    assert err.value.field == "probs[1]"
    with pytest.raises(ValidationError):
        FiniteDistribution.from_list([0.5, 0.4])
    with pytest.raises(ValidationError):
        FiniteDistribution.from_list([])


def test_renormalize_and_readonly():
    p = FiniteDistribution.from_list([2, 1, 1], renormalize=True)
    assert np.allclose(p.probs, [0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        p.probs[0] = 1.0


def test_from_config_reports_field_path():
    with pytest.raises(ValidationError) as err:
        FiniteDistribution.from_config({"probs": [1.0], "extra": 1}, "source.")
    assert err.value.field == "source.extra"


# ── partitions ──────────────────────────────────────────────

def test_partition_is_canonical():
    a = SynsetPartition(((2,), (1, 0)))
    b = SynsetPartition(((0, 1), (2,)))
    assert a == b
    assert a.blocks == ((0, 1), (2,))
    assert list(a.labels) == [0, 0, 1]
    assert a.fingerprint() == b.fingerprint()
    assert a.canonical_bytes() == b"0,1;2"


@pytest.mark.parametrize("blocks", [((0, 1), (1, 2)), ((0,), (2,)), ((0, 1), ()), ()])
def test_partition_rejects_invalid(blocks):
    with pytest.raises(ValidationError):
        SynsetPartition(blocks)


def test_fingerprint_separates_partitions():
    assert SynsetPartition.singletons(3).fingerprint() != SynsetPartition(((0, 1), (2,))).fingerprint()


def test_merge_coarsens():
    s = SynsetPartition.singletons(4).merge(0, 3)
    assert s.blocks == ((0, 3), (1,), (2,))


# ── classical measures ──────────────────────────────────────

def test_entropy_examples(skewed_source):
    assert entropy(FiniteDistribution.uniform(4)) == pytest.approx(2.0, abs=1e-12)
    assert entropy(skewed_source) == pytest.approx(1.5, abs=1e-12)
    assert entropy(skewed_source, unit="nats") == pytest.approx(1.5 * math.log(2), abs=1e-12)
    assert entropy(FiniteDistribution.from_list([1.0, 0.0])) == 0.0


def test_unknown_unit_rejected(skewed_source):
    with pytest.raises(ValidationError):
        entropy(skewed_source, unit="dits")


def test_kl_support_violation_names_index():
    p = FiniteDistribution.from_list([0.5, 0.5, 0.0])
    q = FiniteDistribution.from_list([1.0, 0.0, 0.0])
    with pytest.raises(SupportError) as err:
        kl_divergence(p, q)
    assert err.value.index == 1
    assert kl_divergence(q, p) == pytest.approx(1.0, abs=1e-12)


def test_total_variation():
    p = FiniteDistribution.from_list([0.5, 0.5])
    q = FiniteDistribution.from_list([1.0, 0.0])
    assert total_variation(p, q) == pytest.approx(0.5)


def test_mutual_information_of_product_is_zero(skewed_source):
    assert mutual_information(JointDistribution.product(skewed_source, skewed_source)) == 0.0
    diag = JointDistribution(np.diag(skewed_source.probs))
    assert mutual_information(diag) == pytest.approx(1.5, abs=1e-12)


# ── semantic measures ───────────────────────────────────────

def test_semantic_entropy_examples(skewed_source, pair_blocks):
    assert semantic_entropy(skewed_source, pair_blocks) == pytest.approx(H_B_075, abs=1e-12)
    assert semantic_entropy(skewed_source, SynsetPartition.singletons(3)) == pytest.approx(1.5, abs=1e-12)
    assert semantic_entropy(skewed_source, SynsetPartition.single_block(3)) == 0.0
    uniform = FiniteDistribution.uniform(4)
    assert semantic_entropy(uniform, SynsetPartition(((0, 1), (2, 3)))) == pytest.approx(1.0, abs=1e-12)


def test_partition_size_mismatch(skewed_source):
    with pytest.raises(ValidationError):
        semantic_entropy(skewed_source, SynsetPartition.singletons(4))


def test_block_distribution_and_conditional_entropy(skewed_source, pair_blocks):
    assert np.allclose(block_distribution(skewed_source, pair_blocks).probs, [0.75, 0.25])
    assert conditional_entropy_given_blocks(skewed_source, pair_blocks) == pytest.approx(1.5 - H_B_075, abs=1e-12)


def test_self_information_splits(skewed_source, pair_blocks):
    for x in range(3):
        total = -math.log2(skewed_source.probs[x])
        block = pair_blocks.block_of(x)
        split = semantic_self_information(skewed_source, pair_blocks, block) + detail_self_information(
            skewed_source, pair_blocks, x
        )
        assert split == pytest.approx(total, abs=1e-12)


def test_partial_kl_can_be_negative(pair_blocks):
    q = FiniteDistribution.from_list([0.5, 0.25, 0.25])
    assert partial_semantic_kl(q, q, pair_blocks) < 0


def test_within_block_conditional_rows(skewed_source, pair_blocks):
    table = within_block_conditional(skewed_source, pair_blocks)
    assert np.allclose(table, [[2 / 3, 1 / 3, 0.0], [0.0, 0.0, 1.0]])
    zero = FiniteDistribution.from_list([0.0, 0.0, 1.0])
    assert np.allclose(within_block_conditional(zero, pair_blocks)[0], [0.5, 0.5, 0.0])


def test_semantic_measure_battery(rng, make_distribution, make_partition):
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        p = make_distribution(rng, n, sparse=True)
        q = make_distribution(rng, n)
        s = make_partition(rng, n)
        h, h_s = entropy(p), semantic_entropy(p, s)
        assert h_s <= h + 1e-12
        assert partial_semantic_kl(p, q, s) <= kl_divergence(p, q) + 1e-12
        if s.num_blocks > 1:
            a, b = sorted(rng.choice(s.num_blocks, size=2, replace=False))
            assert semantic_entropy(p, s.merge(int(a), int(b))) <= h_s + 1e-12


def test_single_side_mi_bounded(rng, make_partition):
    for _ in range(200):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        j = JointDistribution(rng.dirichlet(np.ones(n * m)).reshape(n, m))
        s = make_partition(rng, m)
        assert single_side_semantic_mi(j, s) <= mutual_information(j) + 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=1, max_size=12),
    st.integers(min_value=1, max_value=12),
)
def test_semantic_entropy_never_exceeds_entropy(weights, k):
    if sum(weights) <= 0:
        weights = [1.0] + weights[1:]
    p = FiniteDistribution.from_list(weights, renormalize=True)
    s = SynsetPartition.from_labels([i % k for i in range(p.size)])
    assert semantic_entropy(p, s) <= entropy(p) + 1e-12
