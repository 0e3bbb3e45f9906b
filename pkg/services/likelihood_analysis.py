"""
Synonymous Likelihood Analysis
==============================
Splits the expected negative log synonymous likelihood into an expected
distortion term and a divergence term:

    f(p_X, 𝒳) = D_KL[p_X ‖ p_X̂] + δ_p

f depends only on the source and the synset partition; δ_p carries the model
marginal p_X̂. Also reduces a Gaussian likelihood to a weighted E-MSE plus a
data-independent constant.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from services.rdp_optimizer import DistortionMatrix
from utils.prob_core import (
    LN2,
    FiniteDistribution,
    SupportError,
    SynsetPartition,
    ValidationError,
    kl_divergence,
    reject_unknown_keys,
    unit_divisor,
)
from utils.simplex import project_to_simplex

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LikelihoodInstance:
    """Source marginal, model marginal and partition on one alphabet."""

    source: FiniteDistribution
    model: FiniteDistribution
    partition: SynsetPartition

    def __post_init__(self):
        if self.model.size != self.source.size:
            raise ValidationError(
                f"model has {self.model.size} symbols, source has {self.source.size}", field="lemma.model_probs"
            )
        if self.partition.alphabet_size != self.source.size:
            raise ValidationError(
                f"partition covers {self.partition.alphabet_size} indices, source has {self.source.size}",
                field="partition.blocks",
            )
        bad = (self.source.probs > 0) & (self.model.probs <= 0)
        if np.any(bad):
            idx = int(np.flatnonzero(bad)[0])
            raise SupportError(f"model[{idx}] is zero where the source has mass", index=idx)

    @classmethod
    def from_config(
        cls, cfg: Dict[str, Any], source: FiniteDistribution, partition: SynsetPartition, prefix: str = "lemma."
    ) -> "LikelihoodInstance":
        reject_unknown_keys(cfg, ("model_probs",), prefix)
        if "model_probs" not in cfg:
            return cls(source, source, partition)
        try:
            model = FiniteDistribution.from_list(cfg["model_probs"])
        except ValidationError as exc:
            raise ValidationError(str(exc), field=f"{prefix}model_probs") from exc
        return cls(source, model, partition)


@dataclass(frozen=True)
class GaussianReduction:
    dim: int
    sigma2: float
    nll: float
    weighted_mse: float
    constant: float

    @property
    def lambda_d(self) -> float:
        """Weight on ‖x − x̂‖² in bits."""
        return 1.0 / (2.0 * self.sigma2 * LN2)

    def to_dict(self) -> Dict[str, float]:
        return {
            "dim": self.dim,
            "sigma2": self.sigma2,
            "nll": self.nll,
            "weighted_mse": self.weighted_mse,
            "constant": self.constant,
            "lambda_d": self.lambda_d,
        }


class LikelihoodAnalyzer:
    """The f / δ_p decomposition and the distortion side of the synonymous likelihood."""

    @staticmethod
    def _block_log_means(probs: np.ndarray, partition: SynsetPartition, index: int) -> np.ndarray:
        """Per symbol x with p(x) > 0: the mean of log p(x_i) over x's block (nats)."""
        blk = list(partition.blocks[partition.block_of(index)])
        members = probs[blk]
        if np.any(members <= 0):
            bad = blk[int(np.flatnonzero(members <= 0)[0])]
            raise SupportError(f"block member {bad} of symbol {index} has zero source mass", index=bad)
        return np.log(members)

    @staticmethod
    def _mean_log_ratio(inst: LikelihoodInstance, numerator: np.ndarray) -> float:
        """Σ_x p(x) · mean_{x_i∈𝒳(x)} [log numerator(x) − log p(x_i)] in nats."""
        p = inst.source.probs
        total = 0.0
        for x in np.flatnonzero(p > 0):
            logs = LikelihoodAnalyzer._block_log_means(p, inst.partition, int(x))
            total += p[x] * float(np.mean(math.log(numerator[x]) - logs))
        return total

    @staticmethod
    def f_constant(inst: LikelihoodInstance, unit: str = "bits") -> float:
        """Zero for singleton partitions and for internally equiprobable blocks."""
        return LikelihoodAnalyzer._mean_log_ratio(inst, inst.source.probs) / unit_divisor(unit)

    @staticmethod
    def delta_p(inst: LikelihoodInstance, unit: str = "bits") -> float:
        return LikelihoodAnalyzer._mean_log_ratio(inst, inst.model.probs) / unit_divisor(unit)

    @staticmethod
    def divergence_identity_residual(inst: LikelihoodInstance) -> float:
        return (
            LikelihoodAnalyzer.f_constant(inst)
            - kl_divergence(inst.source, inst.model)
            - LikelihoodAnalyzer.delta_p(inst)
        )

    @staticmethod
    def lemma_report(inst: LikelihoodInstance) -> Dict[str, float]:
        f = LikelihoodAnalyzer.f_constant(inst)
        kl = kl_divergence(inst.source, inst.model)
        delta = LikelihoodAnalyzer.delta_p(inst)
        residual = f - kl - delta
        if abs(residual) >= IDENTITY_TOL:
            logger.warning(f"f = KL + δ_p residual {residual:.3e} exceeds {IDENTITY_TOL:g}")
        return {"f": f, "kl": kl, "delta_p": delta, "residual": residual}

    @staticmethod
    def expected_distortion(
        source: FiniteDistribution, partition: SynsetPartition, recon: np.ndarray, metric: DistortionMatrix
    ) -> float:
        """Σ_x p(x) Σ_x̂ recon(x̂ | block(x)) · Δ(x, x̂)."""
        return metric.synset_expected(source, partition, recon)

    synset_expected_distortion = expected_distortion

    @staticmethod
    def gaussian_reduction(x: np.ndarray, xhat: np.ndarray, sigma2: float) -> GaussianReduction:
        """−log2 N(x | x̂, σ²I) = ‖x − x̂‖²/(2σ² ln 2) + (d/2)·log2(2πσ²)."""
        x = np.asarray(x, dtype=float).ravel()
        xhat = np.asarray(xhat, dtype=float).ravel()
        if x.size < 1 or x.shape != xhat.shape:
            raise ValidationError(f"x and xhat must share a dimension >= 1, got {x.size} and {xhat.size}",
                                  field="xhat")
        if not sigma2 > 0:
            raise ValidationError(f"sigma2 must be positive, got {sigma2}", field="sigma2")
        d = x.size
        weighted_mse = float(np.sum((x - xhat) ** 2)) / (2.0 * sigma2 * LN2)
        constant = 0.5 * d * math.log2(2.0 * math.pi * sigma2)
        return GaussianReduction(
            dim=d, sigma2=float(sigma2), nll=weighted_mse + constant, weighted_mse=weighted_mse, constant=constant
        )

    # ═══════════════════════════════════════════════════════════
    # MODEL FITTING
    # ═══════════════════════════════════════════════════════════

    @staticmethod
    def fit_model_marginal(
        inst: LikelihoodInstance,
        max_steps: int = 20000,
        tol: float = 1e-10,
        initial: Optional[FiniteDistribution] = None,
    ) -> List[Tuple[float, float]]:
        """
        Projected-gradient descent on KL(source ‖ model) over the simplex with
        Armijo backtracking. Returns the (kl, δ_p) trajectory in bits, starting
        at the initial model. Stops once KL < tol.
        """
        p = inst.source.probs
        mask = p > 0
        q = np.array((initial or inst.model).probs, dtype=float)

        def kl(v: np.ndarray) -> float:
            if np.any(v[mask] <= 0):
                return math.inf
            return float(np.sum(p[mask] * np.log(p[mask] / v[mask])))

        def record(v: np.ndarray) -> Tuple[float, float]:
            current = LikelihoodInstance(inst.source, FiniteDistribution(v / v.sum()), inst.partition)
            return kl(v) / LN2, LikelihoodAnalyzer.delta_p(current)

        trajectory = [record(q)]
        value = kl(q)
        step = 1.0
        for it in range(max_steps):
            if value / LN2 < tol:
                logger.debug(f"model marginal fitted after {it} steps (KL={value / LN2:.3e} bits)")
                break
            grad = np.zeros_like(q)
            grad[mask] = -p[mask] / q[mask]
            step = min(step * 2.0, 1e3)
            while True:
                candidate = project_to_simplex(q - step * grad)
                trial = kl(candidate)
                if trial <= value + 1e-4 * float(grad @ (candidate - q)):
                    break
                step *= 0.5
                if step < 1e-16:
                    logger.warning(f"line search stalled at step {it} (KL={value / LN2:.3e} bits)")
                    return trajectory
            q, value = candidate, trial
            trajectory.append(record(q))
        else:
            logger.warning(f"fit_model_marginal stopped at max_steps={max_steps} (KL={value / LN2:.3e} bits)")
        return trajectory
