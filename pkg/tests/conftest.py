import numpy as np
import pytest

from utils.prob_core import FiniteDistribution, SynsetPartition


def draw_distribution(rng: np.random.Generator, n: int, sparse: bool = False) -> FiniteDistribution:
    return FiniteDistribution.random(rng, n, sparsity=0.2 if sparse else 0.0)


def draw_partition(rng: np.random.Generator, n: int) -> SynsetPartition:
    return SynsetPartition.random(rng, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def skewed_source():
    return FiniteDistribution.from_list([0.5, 0.25, 0.25])


@pytest.fixture
def pair_blocks():
    return SynsetPartition(((0, 1), (2,)))


@pytest.fixture
def make_distribution():
    return draw_distribution


@pytest.fixture
def make_partition():
    return draw_partition
