import dataclasses

import numpy as np
import pytest

from services.svi_engine import DiscreteLatentModel, SviEngine
from utils.prob_core import FiniteDistribution, SupportError, SynsetPartition, ValidationError, semantic_entropy


def random_model(rng, make_distribution, make_partition):
    n = int(rng.integers(1, 7))
    source = make_distribution(rng, n)
    partition = make_partition(rng, n)
    return DiscreteLatentModel.random(
        source, partition, n_syn=int(rng.integers(1, 5)), n_det=int(rng.integers(1, 4)), rng=rng
    )


def test_ideal_model_is_lossless(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    checks = SviEngine.lossless_conditions_check(m)
    assert checks["kl_zero"] and checks["likelihood_one"] and checks["hs_equals_mi"]
    assert checks["semantic_entropy"] == pytest.approx(semantic_entropy(skewed_source, pair_blocks), abs=1e-12)
    block_mass = [0.75, 0.75, 0.25]
    for x in range(3):
        report = SviEngine.svlbo_report(m, x)
        assert report.evidence == pytest.approx(np.log2(block_mass[x]), abs=1e-12)
        assert report.likelihood_term == pytest.approx(0.0, abs=1e-12)
        assert report.full_kl == pytest.approx(0.0, abs=1e-12)


def test_certain_identification_gives_zero_evidence(skewed_source, pair_blocks):
    ideal = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    certain = DiscreteLatentModel(
        source=ideal.source, source_partition=ideal.source_partition, enc_syn=ideal.enc_syn,
        enc_det=ideal.enc_det, prior_syn=ideal.prior_syn, dec_lik=np.array([[1.0, 0.0], [1.0, 0.0]]),
    )
    report = SviEngine.svlbo_report(certain, 0)
    assert report.evidence == pytest.approx(0.0, abs=1e-12)
    assert report.likelihood_term == pytest.approx(0.0, abs=1e-12)


def test_perturbed_ideal_breaks_kl_zero(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks).perturbed(0.2)
    checks = SviEngine.lossless_conditions_check(m)
    assert not checks["kl_zero"]
    assert not checks["likelihood_one"]
    assert checks["expected_full_kl"] > 0


def test_model_shape_validation(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    with pytest.raises(ValidationError) as err:
        DiscreteLatentModel(
            source=m.source, source_partition=m.source_partition, enc_syn=m.enc_syn,
            enc_det=m.enc_det, prior_syn=m.prior_syn, dec_lik=np.eye(3),
        )
    assert err.value.field == "dec_lik"
    with pytest.raises(ValidationError):
        SviEngine.svlbo_report(m, 5)


def test_config_round_trip(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks).perturbed(0.1)
    again = DiscreteLatentModel.from_config(m.to_config(), "model.")
    assert np.array_equal(again.enc_syn, m.enc_syn)
    assert again.source_partition == m.source_partition
    with pytest.raises(ValidationError) as err:
        DiscreteLatentModel.from_config({**m.to_config(), "bogus": 1}, "model.")
    assert err.value.field == "model.bogus"


def test_full_kl_nonnegative_and_vanishes_at_posterior(rng, make_distribution, make_partition):
    for _ in range(1000):
        m = random_model(rng, make_distribution, make_partition)
        matched = SviEngine.posterior_matched(m)
        for x in range(m.source.size):
            assert SviEngine.full_semantic_kl(m, x) >= -1e-12
            assert abs(SviEngine.full_semantic_kl(matched, x)) < 1e-12


def test_partial_kl_decomposition(rng, make_distribution, make_partition):
    for _ in range(1000):
        m = random_model(rng, make_distribution, make_partition)
        x = int(rng.integers(0, m.source.size))
        parts = SviEngine.kl_decomposition(m, x)
        assert abs(parts["partial"] - (parts["full"] - parts["det_ce"])) < 1e-10


def test_svlbo_identities(rng, make_distribution, make_partition):
    for _ in range(1000):
        m = random_model(rng, make_distribution, make_partition)
        x = int(rng.integers(0, m.source.size))
        report = SviEngine.svlbo_report(m, x)
        assert abs(report.identity_residual) < 1e-10
        assert abs(report.decomposition_residual) < 1e-10
        assert report.svlbo <= report.evidence + 1e-12

        tight = SviEngine.svlbo_report(SviEngine.posterior_matched(m), x)
        assert abs(tight.evidence - tight.svlbo) < 1e-10


def test_lossless_implication_over_ideal_models(rng, make_distribution, make_partition):
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        p = make_distribution(rng, n)
        m = DiscreteLatentModel.ideal(p, make_partition(rng, n))
        checks = SviEngine.lossless_conditions_check(m)
        if checks["kl_zero"] and checks["likelihood_one"]:
            assert checks["hs_equals_mi"]


def test_tightening_path_shrinks_to_zero(rng, make_distribution, make_partition):
    m = random_model(rng, make_distribution, make_partition)
    path = SviEngine.tightening_path(m, 0, np.linspace(0.0, 1.0, 11))
    assert path[-1] == pytest.approx(0.0, abs=1e-12)
    assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))


def test_svi_objective_weights_likelihood(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks).perturbed(0.1)
    base = SviEngine.svi_objective(m, 0.0)
    heavier = SviEngine.svi_objective(m, 1.0)
    assert heavier > base
    ideal = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    assert SviEngine.svi_objective(ideal, 3.0) == pytest.approx(semantic_entropy(skewed_source, pair_blocks))


def test_single_symbol_model():
    source = FiniteDistribution.from_list([1.0])
    m = DiscreteLatentModel.ideal(source, SynsetPartition.singletons(1))
    report = SviEngine.svlbo_report(m, 0)
    assert report.evidence == 0.0
    assert report.identity_residual == pytest.approx(0.0, abs=1e-12)


# ── posterior ───────────────────────────────────────────────

def test_bijective_decoder_gives_indicator_posterior(skewed_source, pair_blocks):
    m = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    for block in range(pair_blocks.num_blocks):
        posterior = SviEngine.true_syn_posterior(m, block)
        assert np.array_equal(posterior.probs, np.eye(pair_blocks.num_blocks)[block])


def test_uniform_prior_and_likelihood_give_uniform_posterior(skewed_source, pair_blocks):
    ideal = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    m = DiscreteLatentModel(
        source=ideal.source, source_partition=ideal.source_partition,
        enc_syn=np.full((3, 4), 0.25), enc_det=np.full((3, 4, 2), 0.5),
        prior_syn=FiniteDistribution.uniform(4), dec_lik=np.full((4, 2), 0.5),
    )
    for block in range(2):
        assert np.allclose(SviEngine.true_syn_posterior(m, block).probs, 0.25, rtol=0.0, atol=1e-15)


def test_posterior_matches_bayes_rule(rng, make_distribution, make_partition):
    for _ in range(100):
        source, partition = make_distribution(rng, 4), make_partition(rng, 4)
        m = DiscreteLatentModel.random(source, partition, n_syn=3, n_det=2, rng=rng)
        for block in range(partition.num_blocks):
            weights = [float(m.dec_lik[y, block]) * float(m.prior_syn.probs[y]) for y in range(3)]
            expected = [w / sum(weights) for w in weights]
            got = SviEngine.true_syn_posterior(m, block).probs
            assert max(abs(g - e) for g, e in zip(got, expected)) < 1e-12


def test_full_kl_rejects_mass_on_impossible_latent(skewed_source, pair_blocks):
    ideal = DiscreteLatentModel.ideal(skewed_source, pair_blocks)
    m = dataclasses.replace(ideal, enc_syn=np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(SupportError):
        SviEngine.full_semantic_kl(m, 0)
    assert SviEngine.full_semantic_kl(m, 1) == 0.0
    assert SviEngine.full_semantic_kl(m, 2) == 0.0


# ── decomposition edge cases ────────────────────────────────

def test_deterministic_detail_encoder_has_no_detail_entropy(rng, make_distribution, make_partition):
    for _ in range(200):
        m = random_model(rng, make_distribution, make_partition)
        one_hot = np.zeros_like(m.enc_det)
        np.put_along_axis(one_hot, m.enc_det.argmax(axis=-1)[..., None], 1.0, axis=-1)
        m = dataclasses.replace(m, enc_det=one_hot)
        x = int(rng.integers(0, m.source.size))
        parts = SviEngine.kl_decomposition(m, x)
        assert parts["det_ce"] == pytest.approx(0.0, abs=1e-12)
        assert abs(parts["partial"] - parts["full"]) < 1e-12


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_uniform_detail_encoder_costs_log_k(rng, make_distribution, make_partition, k):
    m = random_model(rng, make_distribution, make_partition)
    m = DiscreteLatentModel.random(m.source, m.source_partition, n_syn=m.n_syn, n_det=k, rng=rng)
    m = dataclasses.replace(m, enc_det=np.full_like(m.enc_det, 1.0 / k))
    parts = SviEngine.kl_decomposition(m, 0)
    assert parts["det_ce"] == pytest.approx(np.log2(k), abs=1e-12)
    assert parts["partial"] == pytest.approx(parts["full"] - np.log2(k), abs=1e-10)


# ── lossless conditions ─────────────────────────────────────

def test_slightly_perturbed_ideal_fails_every_condition(skewed_source, pair_blocks):
    checks = SviEngine.lossless_conditions_check(DiscreteLatentModel.ideal(skewed_source, pair_blocks).perturbed(1e-3))
    assert not checks["kl_zero"]
    assert not checks["likelihood_one"]
    assert not checks["hs_equals_mi"]
    assert abs(checks["semantic_entropy"] - checks["block_latent_mi"]) > 1e-4


def test_tightening_path_strictly_decreases(rng, make_distribution, make_partition):
    checked = 0
    ts = np.linspace(0.0, 1.0, 11)
    for _ in range(300):
        m = random_model(rng, make_distribution, make_partition)
        posterior = SviEngine.true_syn_posterior(m, m.source_partition.block_of(0)).probs
        if 0.5 * np.abs(m.enc_syn[0] - posterior).sum() <= 1e-3:
            continue
        path = SviEngine.tightening_path(m, 0, ts)
        assert all(b < a for a, b in zip(path, path[1:]))
        checked += 1
    assert checked > 100
