"""
Property Suites
===============
Seeded random-instance checks of the identities and inequalities the toolkit
rests on:

  * semantic measures : H_s ≤ H, partial semantic KL ≤ KL, H_s shrinks under merging
  * latent model      : full semantic KL ≥ 0 and vanishing at the posterior,
                        the partial/full KL decomposition, the SVLBO identity
  * likelihood        : f = KL + δ_p, singleton collapse, fitted model closes the gap
  * channels          : I(X; X̂̃) ≤ I(X; X̂) on random joints
  * oracle            : R(D, P) against the exhaustive grid search (alphabets ≤ 3)

Each suite draws from its own child of one seed and reports the worst
residual it saw against a fixed tolerance.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from services.likelihood_analysis import LikelihoodAnalyzer, LikelihoodInstance
from services.rdp_optimizer import ConvergenceError, DistortionMatrix, InfeasibleError, RdpOptimizer, SolverConfig
from services.svi_engine import DiscreteLatentModel, SviEngine
from utils.prob_core import (
    FiniteDistribution,
    JointDistribution,
    SynsetPartition,
    entropy,
    kl_divergence,
    partial_semantic_kl,
    semantic_entropy,
)

logger = logging.getLogger(__name__)

ORACLE_TOL = 2e-3
DEFAULT_ORACLE_POINTS = ((0.1, 0.05), (0.15, 0.01), (0.2, 0.2), (0.3, math.inf))
FITTED_INSTANCES = 5


@dataclass
class SuiteCheck:
    name: str
    instances: int
    residual: float     # worst violation over the instances; 0 when all hold
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "instances": self.instances,
            "residual": float(self.residual),
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _random_model(rng: np.random.Generator) -> DiscreteLatentModel:
    n = int(rng.integers(1, 7))
    return DiscreteLatentModel.random(
        FiniteDistribution.random(rng, n),
        SynsetPartition.random(rng, n),
        n_syn=int(rng.integers(1, 5)),
        n_det=int(rng.integers(1, 4)),
        rng=rng,
    )


class PropertySuites:
    """Random-instance suites; every method returns SuiteCheck records."""

    # ═══════════════════════════════════════════════════════
    # INFORMATION MEASURES
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def semantic_measures(rng: np.random.Generator, count: int) -> List[SuiteCheck]:
        below_h = partial_below_kl = merge_shrinks = 0.0
        for _ in range(count):
            n = int(rng.integers(1, 17))
            p = FiniteDistribution.random(rng, n, sparsity=0.2)
            q = FiniteDistribution.random(rng, n)
            s = SynsetPartition.random(rng, n)
            h_s = semantic_entropy(p, s)
            below_h = max(below_h, h_s - entropy(p))
            partial_below_kl = max(partial_below_kl, partial_semantic_kl(p, q, s) - kl_divergence(p, q))
            if s.num_blocks > 1:
                a, b = sorted(rng.choice(s.num_blocks, size=2, replace=False))
                merge_shrinks = max(merge_shrinks, semantic_entropy(p, s.merge(int(a), int(b))) - h_s)
        return [
            SuiteCheck("semantic_entropy_below_entropy", count, below_h, 1e-12),
            SuiteCheck("partial_kl_below_kl", count, partial_below_kl, 1e-12),
            SuiteCheck("merging_blocks_lowers_semantic_entropy", count, merge_shrinks, 1e-12),
        ]

    @staticmethod
    def semantic_mi(rng: np.random.Generator, count: int) -> List[SuiteCheck]:
        worst = 0.0
        for _ in range(count):
            n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            joint = JointDistribution(rng.dirichlet(np.ones(n * m)).reshape(n, m))
            cmp = RdpOptimizer.semantic_mi_comparison(joint, SynsetPartition.random(rng, m))
            worst = max(worst, cmp["i_semantic"] - cmp["i_syntactic"])
        return [SuiteCheck("semantic_mi_below_syntactic_mi", count, worst, 1e-12)]

    # ═══════════════════════════════════════════════════════
    # LATENT MODEL
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def full_kl(rng: np.random.Generator, count: int) -> List[SuiteCheck]:
        negative = at_posterior = 0.0
        for _ in range(count):
            m = _random_model(rng)
            matched = SviEngine.posterior_matched(m)
            for x in range(m.source.size):
                negative = max(negative, -SviEngine.full_semantic_kl(m, x))
                at_posterior = max(at_posterior, abs(SviEngine.full_semantic_kl(matched, x)))
        return [
            SuiteCheck("full_kl_nonnegative", count, negative, 1e-12),
            SuiteCheck("full_kl_zero_at_posterior", count, at_posterior, 1e-12),
        ]

    @staticmethod
    def kl_decomposition(rng: np.random.Generator, count: int) -> List[SuiteCheck]:
        worst = 0.0
        for _ in range(count):
            m = _random_model(rng)
            parts = SviEngine.kl_decomposition(m, int(rng.integers(0, m.source.size)))
            worst = max(worst, abs(parts["residual"]))
        return [SuiteCheck("partial_kl_equals_full_minus_detail_entropy", count, worst, 1e-10)]

    @staticmethod
    def svlbo_identity(rng: np.random.Generator, count: int) -> List[SuiteCheck]:
        identity = tight = 0.0
        for _ in range(count):
            m = _random_model(rng)
            x = int(rng.integers(0, m.source.size))
            identity = max(identity, abs(SviEngine.svlbo_report(m, x).identity_residual))
            matched = SviEngine.svlbo_report(SviEngine.posterior_matched(m), x)
            tight = max(tight, abs(matched.evidence - matched.svlbo))
        return [
            SuiteCheck("evidence_equals_svlbo_plus_full_kl", count, identity, 1e-10),
            SuiteCheck("svlbo_tight_at_posterior", count, tight, 1e-10),
        ]

    # ═══════════════════════════════════════════════════════
    # LIKELIHOOD DECOMPOSITION
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def likelihood(rng: np.random.Generator, count: int, fitted: int = FITTED_INSTANCES) -> List[SuiteCheck]:
        identity = collapse = 0.0
        for _ in range(count):
            n = int(rng.integers(1, 12))
            source, model = FiniteDistribution.random(rng, n), FiniteDistribution.random(rng, n)
            identity = max(identity, abs(LikelihoodAnalyzer.lemma_report(
                LikelihoodInstance(source, model, SynsetPartition.random(rng, n)))["residual"]))
            single = LikelihoodAnalyzer.lemma_report(LikelihoodInstance(source, model, SynsetPartition.singletons(n)))
            collapse = max(collapse, abs(single["f"]), abs(single["delta_p"] + single["kl"]))

        fit_kl = fit_gap = 0.0
        for _ in range(fitted):
            n = int(rng.integers(2, 7))
            source = FiniteDistribution(0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n)
            inst = LikelihoodInstance(source, FiniteDistribution.random(rng, n), SynsetPartition.random(rng, n))
            kl, delta = LikelihoodAnalyzer.fit_model_marginal(inst, tol=1e-9)[-1]
            fit_kl = max(fit_kl, kl)
            fit_gap = max(fit_gap, abs(delta - LikelihoodAnalyzer.f_constant(inst)))
        return [
            SuiteCheck("f_equals_kl_plus_delta_p", count, identity, 1e-12),
            SuiteCheck("singleton_collapse", count, collapse, 1e-12),
            SuiteCheck("fitted_model_kl", fitted, fit_kl, 1e-8),
            SuiteCheck("fitted_model_delta_p_equals_f", fitted, fit_gap, 1e-6),
        ]

    # ═══════════════════════════════════════════════════════
    # EXHAUSTIVE ORACLE
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def oracle(
        source: FiniteDistribution,
        delta: DistortionMatrix,
        points: Sequence[Tuple[float, float]],
        cfg: SolverConfig = SolverConfig(),
    ) -> List[SuiteCheck]:
        """R(D, P) against the grid search; skipped for alphabets the oracle cannot enumerate."""
        if not delta.is_square or source.size > 3:
            logger.info(f"Oracle spot checks skipped for a {delta.shape[0]}x{delta.shape[1]} distortion")
            return []
        cfg = dataclasses.replace(cfg, perception="kl", check_dominance=False)
        checks = []
        for d, p in points:
            expected = RdpOptimizer.brute_force_rdp(source, delta, d, p)
            try:
                residual = abs(RdpOptimizer.rdp_solve(source, delta, d, p, cfg).rate - expected)
            except InfeasibleError:
                residual = 0.0 if math.isinf(expected) else math.inf
            except ConvergenceError as exc:
                logger.warning(f"Oracle point (D={d:g}, P={p:g}) did not converge: {exc}")
                residual = math.inf
            checks.append(SuiteCheck(f"matches_exhaustive_search[D={d:g},P={p:g}]", 1, residual, ORACLE_TOL))
        return checks

    # ═══════════════════════════════════════════════════════
    # DRIVER
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def run_all(
        seed: int,
        count: int,
        source: FiniteDistribution,
        delta: DistortionMatrix,
        oracle_points: Sequence[Tuple[float, float]] = DEFAULT_ORACLE_POINTS,
        cfg: SolverConfig = SolverConfig(),
    ) -> List[SuiteCheck]:
        suites = (
            PropertySuites.semantic_measures,
            PropertySuites.full_kl,
            PropertySuites.kl_decomposition,
            PropertySuites.svlbo_identity,
            PropertySuites.likelihood,
            PropertySuites.semantic_mi,
        )
        children = np.random.SeedSequence(seed).spawn(len(suites))
        checks: List[SuiteCheck] = []
        for suite, child in zip(suites, children):
            found = suite(np.random.default_rng(child), count)
            logger.info(f"{suite.__name__}: {sum(c.passed for c in found)}/{len(found)} checks passed")
            checks.extend(found)
        checks.extend(PropertySuites.oracle(source, delta, oracle_points, cfg))
        return checks
