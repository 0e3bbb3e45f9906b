import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from services.likelihood_analysis import LikelihoodAnalyzer, LikelihoodInstance
from services.rdp_optimizer import DistortionMatrix
from utils.prob_core import (
    FiniteDistribution,
    SupportError,
    SynsetPartition,
    ValidationError,
    kl_divergence,
    within_block_conditional,
)


def instance(source, model, blocks):
    return LikelihoodInstance(
        FiniteDistribution.from_list(source), FiniteDistribution.from_list(model), SynsetPartition(blocks)
    )


# ── f and δ_p ───────────────────────────────────────────────

def test_f_constant_examples():
    skewed = instance([0.5, 0.25, 0.25], [0.5, 0.25, 0.25], ((0, 1), (2,)))
    assert LikelihoodAnalyzer.f_constant(skewed) == pytest.approx(0.125, abs=1e-12)

    flat_blocks = instance([0.25, 0.25, 0.5], [0.25, 0.25, 0.5], ((0, 1), (2,)))
    assert LikelihoodAnalyzer.f_constant(flat_blocks) == 0.0

    singletons = instance([0.1, 0.2, 0.7], [0.3, 0.3, 0.4], ((0,), (1,), (2,)))
    assert LikelihoodAnalyzer.f_constant(singletons) == 0.0


def test_delta_p_examples():
    same = instance([0.5, 0.25, 0.25], [0.5, 0.25, 0.25], ((0, 1), (2,)))
    assert LikelihoodAnalyzer.delta_p(same) == pytest.approx(LikelihoodAnalyzer.f_constant(same), abs=1e-15)

    singletons = instance([0.1, 0.2, 0.7], [0.3, 0.3, 0.4], ((0,), (1,), (2,)))
    assert LikelihoodAnalyzer.delta_p(singletons) == pytest.approx(
        -kl_divergence(singletons.source, singletons.model), abs=1e-12
    )


def test_zero_mass_block_member_is_a_support_error():
    inst = instance([0.5, 0.0, 0.5], [0.4, 0.2, 0.4], ((0, 1), (2,)))
    with pytest.raises(SupportError) as err:
        LikelihoodAnalyzer.f_constant(inst)
    assert err.value.index == 1


def test_instance_rejects_missing_model_support():
    with pytest.raises(SupportError):
        instance([0.5, 0.5], [1.0, 0.0], ((0, 1),))
    with pytest.raises(ValidationError):
        instance([0.5, 0.5], [0.2, 0.3, 0.5], ((0, 1),))


def test_identity_on_random_instances(rng, make_distribution, make_partition):
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        inst = LikelihoodInstance(make_distribution(rng, n), make_distribution(rng, n), make_partition(rng, n))
        report = LikelihoodAnalyzer.lemma_report(inst)
        assert abs(report["residual"]) < 1e-12
        assert abs(LikelihoodAnalyzer.divergence_identity_residual(inst)) < 1e-12
        assert report["delta_p"] <= report["f"] + 1e-12


def test_singleton_collapse(rng, make_distribution):
    for _ in range(200):
        n = int(rng.integers(1, 12))
        inst = LikelihoodInstance(make_distribution(rng, n), make_distribution(rng, n), SynsetPartition.singletons(n))
        report = LikelihoodAnalyzer.lemma_report(inst)
        assert report["f"] == 0.0
        assert abs(report["delta_p"] + report["kl"]) < 1e-12


def test_fitting_the_model_closes_the_gap(rng, make_distribution, make_partition):
    for _ in range(5):
        n = int(rng.integers(2, 7))
        source = FiniteDistribution(0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n)
        inst = LikelihoodInstance(source, make_distribution(rng, n), make_partition(rng, n))
        trajectory = LikelihoodAnalyzer.fit_model_marginal(inst, tol=1e-9)
        kl, delta = trajectory[-1]
        assert kl < 1e-8
        assert abs(delta - LikelihoodAnalyzer.f_constant(inst)) < 1e-6
        kls = [k for k, _ in trajectory]
        assert all(b <= a + 1e-15 for a, b in zip(kls, kls[1:]))


# ── distortion and the Gaussian reduction ───────────────────

def test_expected_distortion_examples(skewed_source, pair_blocks):
    hamming = DistortionMatrix.hamming(3)
    singletons = SynsetPartition.singletons(3)
    assert LikelihoodAnalyzer.expected_distortion(skewed_source, singletons, np.eye(3), hamming) == 0.0

    recon = within_block_conditional(skewed_source, pair_blocks)
    value = LikelihoodAnalyzer.expected_distortion(skewed_source, pair_blocks, recon, hamming)
    assert value == pytest.approx(1.0 / 3.0, abs=1e-12)

    uniform = np.full((2, 3), 1.0 / 3.0)
    brute = sum(
        skewed_source.probs[x] * uniform[pair_blocks.block_of(x), xh] * hamming.delta[x, xh]
        for x in range(3) for xh in range(3)
    )
    assert LikelihoodAnalyzer.expected_distortion(skewed_source, pair_blocks, uniform, hamming) == pytest.approx(brute)
    assert LikelihoodAnalyzer.synset_expected_distortion(skewed_source, pair_blocks, uniform, hamming) == pytest.approx(
        brute
    )


def test_expected_distortion_shape_mismatch(skewed_source, pair_blocks):
    with pytest.raises(ValidationError):
        LikelihoodAnalyzer.expected_distortion(skewed_source, pair_blocks, np.eye(3), DistortionMatrix.hamming(3))


def test_gaussian_reduction_examples():
    zero = LikelihoodAnalyzer.gaussian_reduction([0.3], [0.3], 1.0 / (2.0 * math.pi))
    assert zero.nll == pytest.approx(0.0, abs=1e-12)

    unit = LikelihoodAnalyzer.gaussian_reduction([1.0, 0.0], [0.0, 0.0], 1.0)
    assert unit.weighted_mse == pytest.approx(1.0 / (2.0 * math.log(2.0)), abs=1e-12)
    assert unit.lambda_d == pytest.approx(1.0 / (2.0 * math.log(2.0)), abs=1e-12)

    with pytest.raises(ValidationError):
        LikelihoodAnalyzer.gaussian_reduction([1.0], [1.0], 0.0)
    with pytest.raises(ValidationError):
        LikelihoodAnalyzer.gaussian_reduction([1.0, 2.0], [1.0], 1.0)


def test_gaussian_reduction_matches_density(rng):
    for _ in range(100):
        d = int(rng.integers(1, 65))
        x, xhat = rng.normal(size=d), rng.normal(size=d)
        sigma2 = float(rng.uniform(0.1, 4.0))
        red = LikelihoodAnalyzer.gaussian_reduction(x, xhat, sigma2)
        oracle = -multivariate_normal(mean=xhat, cov=sigma2 * np.eye(d)).logpdf(x) / math.log(2.0)
        assert red.nll == pytest.approx(oracle, abs=1e-9)
        assert abs(red.nll - (red.weighted_mse + red.constant)) < 1e-9

        other = LikelihoodAnalyzer.gaussian_reduction(rng.normal(size=d), rng.normal(size=d), sigma2)
        assert other.nll - other.weighted_mse == pytest.approx(red.nll - red.weighted_mse, abs=1e-9)
