"""
Synonymous Variational Inference Engine
=======================================
Exact, finite-sum evaluation of the synonymous variational identities on a
fully discrete latent model (X, Y_s, Y_ε):

    log p(𝒳)              = SVLBO + D_KL[q(y_s|x) ‖ p(y_s|𝒳)]
    partial semantic KL   = full semantic KL − H(Y_ε | X=x, Y_s)
    −SVLBO                = likelihood term + rate term − H(q(·|x))

The encoder entropy H(q(·|x)) does not cancel in discrete form, so it is
reported alongside the seven classical report fields.

Identity residuals are held to 1e-10, boolean conditions to 1e-9.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from scipy.special import entr

from utils.prob_core import (
    LN2,
    FiniteDistribution,
    JointDistribution,
    SupportError,
    SynsetPartition,
    ValidationError,
    block_distribution,
    kl_divergence,
    mutual_information,
    partial_semantic_kl,
    reject_unknown_keys,
    semantic_entropy,
    validate_stochastic_rows,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
CONDITION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteLatentModel:
    """
    Finite-alphabet inference/generative pair.

    enc_syn  (|X| × |Y_s|)         q(y_s | x)
    enc_det  (|X| × |Y_s| × |Y_ε|) q(y_ε | x, y_s)
    prior_syn (|Y_s|)              p(y_s)
    dec_lik  (|Y_s| × blocks)      p(𝒳 | y_s)
    """

    source: FiniteDistribution
    source_partition: SynsetPartition
    enc_syn: np.ndarray
    enc_det: np.ndarray
    prior_syn: FiniteDistribution
    dec_lik: np.ndarray

    def __post_init__(self):
        if self.source_partition.alphabet_size != self.source.size:
            raise ValidationError(
                f"partition covers {self.source_partition.alphabet_size} symbols, source has {self.source.size}",
                field="blocks",
            )
        enc_syn = validate_stochastic_rows(self.enc_syn, "enc_syn")
        enc_det = validate_stochastic_rows(self.enc_det, "enc_det")
        dec_lik = validate_stochastic_rows(self.dec_lik, "dec_lik")

        if enc_syn.ndim != 2 or enc_syn.shape[0] != self.source.size:
            raise ValidationError(f"enc_syn must have {self.source.size} rows", field="enc_syn")
        n_syn = enc_syn.shape[1]
        if enc_det.ndim != 3 or enc_det.shape[:2] != (self.source.size, n_syn):
            raise ValidationError(
                f"enc_det must be shaped ({self.source.size}, {n_syn}, |Y_ε|)", field="enc_det"
            )
        if self.prior_syn.size != n_syn:
            raise ValidationError(f"prior_syn must cover {n_syn} synonymous symbols", field="prior_syn")
        if dec_lik.ndim != 2 or dec_lik.shape != (n_syn, self.source_partition.num_blocks):
            raise ValidationError(
                f"dec_lik must be shaped ({n_syn}, {self.source_partition.num_blocks})", field="dec_lik"
            )

        object.__setattr__(self, "enc_syn", enc_syn)
        object.__setattr__(self, "enc_det", enc_det)
        object.__setattr__(self, "dec_lik", dec_lik)

    @property
    def n_syn(self) -> int:
        return int(self.enc_syn.shape[1])

    @property
    def n_det(self) -> int:
        return int(self.enc_det.shape[2])

    @property
    def num_blocks(self) -> int:
        return self.source_partition.num_blocks

    # ── construction ────────────────────────────────────────

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "") -> "DiscreteLatentModel":
        keys = ("source", "blocks", "enc_syn", "enc_det", "prior_syn", "dec_lik")
        reject_unknown_keys(cfg, keys, prefix)
        for key in keys:
            if key not in cfg:
                raise ValidationError(f"missing key '{key}'", field=f"{prefix}{key}")
        try:
            return cls(
                source=FiniteDistribution.from_list(cfg["source"]),
                source_partition=SynsetPartition(tuple(tuple(b) for b in cfg["blocks"])),
                enc_syn=np.array(cfg["enc_syn"], dtype=float),
                enc_det=np.array(cfg["enc_det"], dtype=float),
                prior_syn=FiniteDistribution.from_list(cfg["prior_syn"]),
                dec_lik=np.array(cfg["dec_lik"], dtype=float),
            )
        except ValidationError as exc:
            raise ValidationError(str(exc), field=f"{prefix}{exc.field}") from exc
        except ValueError as exc:
            raise ValidationError(f"malformed latent model table: {exc}", field=prefix.rstrip(".")) from exc

    def to_config(self) -> Dict[str, Any]:
        return {
            "source": self.source.to_config()["probs"],
            "blocks": self.source_partition.to_config()["blocks"],
            "enc_syn": self.enc_syn.tolist(),
            "enc_det": self.enc_det.tolist(),
            "prior_syn": self.prior_syn.to_config()["probs"],
            "dec_lik": self.dec_lik.tolist(),
        }

    @classmethod
    def ideal(cls, source: FiniteDistribution, partition: SynsetPartition, n_det: int = 0) -> "DiscreteLatentModel":
        """
        Bijective blocks↔y_s model: one-hot synonymous encoder, block-mass prior,
        identity decoder. The detail encoder indexes the position inside the
        block (n_det defaults to the largest block size).
        """
        n_blocks = partition.num_blocks
        n_det = n_det or int(partition.block_sizes.max())
        enc_syn = np.zeros((source.size, n_blocks))
        enc_syn[np.arange(source.size), partition.labels] = 1.0
        enc_det = np.zeros((source.size, n_blocks, n_det))
        for blk in partition.blocks:
            for pos, x in enumerate(blk):
                enc_det[x, :, pos % n_det] = 1.0
        return cls(
            source=source,
            source_partition=partition,
            enc_syn=enc_syn,
            enc_det=enc_det,
            prior_syn=block_distribution(source, partition),
            dec_lik=np.eye(n_blocks),
        )

    @classmethod
    def random(
        cls,
        source: FiniteDistribution,
        partition: SynsetPartition,
        n_syn: int,
        n_det: int,
        rng: np.random.Generator,
        concentration: float = 1.0,
    ) -> "DiscreteLatentModel":
        n_x, n_blocks = source.size, partition.num_blocks
        return cls(
            source=source,
            source_partition=partition,
            enc_syn=rng.dirichlet(np.full(n_syn, concentration), size=n_x),
            enc_det=rng.dirichlet(np.full(n_det, concentration), size=(n_x, n_syn)),
            prior_syn=FiniteDistribution(rng.dirichlet(np.full(n_syn, concentration))),
            dec_lik=rng.dirichlet(np.full(n_blocks, concentration), size=n_syn),
        )

    def perturbed(self, eps: float) -> "DiscreteLatentModel":
        """Mix every conditional row with the uniform row at weight eps."""
        def mix(table: np.ndarray) -> np.ndarray:
            return (1.0 - eps) * table + eps / table.shape[-1]

        return DiscreteLatentModel(
            source=self.source,
            source_partition=self.source_partition,
            enc_syn=mix(self.enc_syn),
            enc_det=mix(self.enc_det),
            prior_syn=self.prior_syn,
            dec_lik=mix(self.dec_lik),
        )


@dataclass(frozen=True)
class SviReport:
    """Per-symbol SVLBO breakdown, all in bits."""

    evidence: float
    svlbo: float
    full_kl: float
    partial_kl: float
    det_cond_entropy: float
    likelihood_term: float
    rate_term: float
    encoder_entropy: float

    @property
    def identity_residual(self) -> float:
        """evidence − (svlbo + full_kl)"""
        return self.evidence - (self.svlbo + self.full_kl)

    @property
    def decomposition_residual(self) -> float:
        """−svlbo − (likelihood + rate − encoder entropy)"""
        return -self.svlbo - (self.likelihood_term + self.rate_term - self.encoder_entropy)

    def to_dict(self) -> Dict[str, float]:
        return {
            "evidence": self.evidence,
            "svlbo": self.svlbo,
            "full_kl": self.full_kl,
            "partial_kl": self.partial_kl,
            "det_cond_entropy": self.det_cond_entropy,
            "likelihood_term": self.likelihood_term,
            "rate_term": self.rate_term,
            "encoder_entropy": self.encoder_entropy,
        }


class SviEngine:
    """Synonymous variational identities on a DiscreteLatentModel."""

    @staticmethod
    def _block(m: DiscreteLatentModel, x: int) -> int:
        if not 0 <= x < m.source.size:
            raise ValidationError(f"symbol {x} outside the source alphabet of size {m.source.size}", field="x")
        return m.source_partition.block_of(x)

    @staticmethod
    def true_syn_posterior(m: DiscreteLatentModel, block_id: int) -> FiniteDistribution:
        """p(y_s | 𝒳) ∝ p(𝒳 | y_s) · p(y_s)."""
        if not 0 <= block_id < m.num_blocks:
            raise ValidationError(f"block {block_id} outside 0..{m.num_blocks - 1}", field="block_id")
        joint = m.dec_lik[:, block_id] * m.prior_syn.probs
        evidence = float(joint.sum())
        if evidence <= 0:
            raise SupportError(f"block {block_id} has zero evidence under the model", index=block_id)
        return FiniteDistribution(joint / evidence)

    @staticmethod
    def full_semantic_kl(m: DiscreteLatentModel, x: int) -> float:
        """D_KL[q(y_s|x) ‖ p(y_s|𝒳(x))], never negative."""
        block = SviEngine._block(m, x)
        q = FiniteDistribution(m.enc_syn[x])
        return kl_divergence(q, SviEngine.true_syn_posterior(m, block))

    @staticmethod
    def kl_decomposition(m: DiscreteLatentModel, x: int) -> Dict[str, Any]:
        """
        Partial semantic KL of q(y_s, y_ε | x) against the block posterior,
        alongside full semantic KL and H(Y_ε | X=x, Y_s).

        The latent alphabet is flattened to (y_s, y_ε) pairs and grouped by y_s;
        the reference spreads p(y_s|𝒳) evenly across each group so that group
        masses equal the posterior.
        """
        block = SviEngine._block(m, x)
        posterior = SviEngine.true_syn_posterior(m, block)
        n_syn, n_det = m.n_syn, m.n_det

        q_joint = m.enc_syn[x][:, None] * m.enc_det[x]
        latent_groups = SynsetPartition(tuple(tuple(range(k * n_det, (k + 1) * n_det)) for k in range(n_syn)))
        reference = FiniteDistribution(np.repeat(posterior.probs / n_det, n_det))

        partial = partial_semantic_kl(FiniteDistribution(q_joint.ravel()), reference, latent_groups)
        full = kl_divergence(FiniteDistribution(m.enc_syn[x]), posterior)
        det_ce = float(m.enc_syn[x] @ entr(m.enc_det[x]).sum(axis=1) / LN2)

        residual = partial - (full - det_ce)
        if abs(residual) > IDENTITY_TOL:
            logger.warning(f"Decomposition residual {residual:.3e} exceeds {IDENTITY_TOL:g} at x={x}")
        return {"partial": partial, "full": full, "det_ce": det_ce, "residual": residual}

    @staticmethod
    def svlbo_report(m: DiscreteLatentModel, x: int) -> SviReport:
        block = SviEngine._block(m, x)
        q = m.enc_syn[x]
        lik = m.dec_lik[:, block]
        prior = m.prior_syn.probs

        evidence_mass = float(lik @ prior)
        if evidence_mass <= 0:
            raise SupportError(f"block {block} has zero evidence under the model", index=block)

        active = q > 0
        dead = active & ((lik == 0) | (prior == 0))
        if np.any(dead):
            ys = int(np.flatnonzero(dead)[0])
            raise SupportError(
                f"q(y_s={ys}|x={x}) > 0 but the model gives y_s={ys} zero joint mass with block {block}",
                index=ys,
            )

        qa = q[active]
        log_lik = np.log(lik[active])
        log_prior = np.log(prior[active])
        log_q = np.log(qa)

        decomposition = SviEngine.kl_decomposition(m, x)
        return SviReport(
            evidence=float(np.log(evidence_mass) / LN2),
            svlbo=float(qa @ (log_lik + log_prior - log_q) / LN2),
            full_kl=decomposition["full"],
            partial_kl=decomposition["partial"],
            det_cond_entropy=decomposition["det_ce"],
            likelihood_term=float(-(qa @ log_lik) / LN2),
            rate_term=float(-(qa @ log_prior) / LN2),
            encoder_entropy=float(-(qa @ log_q) / LN2),
        )

    @staticmethod
    def lossless_conditions_check(m: DiscreteLatentModel) -> Dict[str, Any]:
        """
        Conditions for lossless semantic representation and identification.

        kl_zero        E_x[full semantic KL] < 1e-9
        likelihood_one p(𝒳(x)|y_s) > 1 − 1e-9 wherever q(y_s|x) > 0
        hs_equals_mi   |H_s(X̃) − I(X̃; Y_s)| < 1e-9
        """
        p = m.source.probs
        labels = m.source_partition.labels

        expected_kl = 0.0
        for x in np.flatnonzero(p > 0):
            try:
                expected_kl += float(p[x]) * SviEngine.full_semantic_kl(m, int(x))
            except SupportError:
                expected_kl = float("inf")
                break

        lik_per_symbol = m.dec_lik[:, labels].T
        likelihood_one = bool(np.all(lik_per_symbol[m.enc_syn > 0] > 1.0 - CONDITION_TOL))

        block_latent = m.source_partition.indicator().T @ (p[:, None] * m.enc_syn)
        mi = mutual_information(JointDistribution(block_latent))
        h_s = semantic_entropy(m.source, m.source_partition)

        return {
            "kl_zero": bool(expected_kl < CONDITION_TOL),
            "likelihood_one": likelihood_one,
            "hs_equals_mi": bool(abs(h_s - mi) < CONDITION_TOL),
            "expected_full_kl": expected_kl,
            "semantic_entropy": h_s,
            "block_latent_mi": mi,
        }

    # ═══════════════════════════════════════════════════════
    # OPTIMISATION VIEW
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def svi_objective(m: DiscreteLatentModel, lam: float = 0.0) -> float:
        """E_x E_q[−(λ+1)·log p(𝒳|y_s) − log p(y_s)] in bits."""
        total = 0.0
        for x in np.flatnonzero(m.source.probs > 0):
            report = SviEngine.svlbo_report(m, int(x))
            total += float(m.source.probs[x]) * ((lam + 1.0) * report.likelihood_term + report.rate_term)
        return total

    @staticmethod
    def posterior_matched(m: DiscreteLatentModel) -> DiscreteLatentModel:
        """Replace every encoder row by the true posterior of its block."""
        enc_syn = np.vstack([
            SviEngine.true_syn_posterior(m, m.source_partition.block_of(x)).probs
            for x in range(m.source.size)
        ])
        return DiscreteLatentModel(
            source=m.source,
            source_partition=m.source_partition,
            enc_syn=enc_syn,
            enc_det=m.enc_det,
            prior_syn=m.prior_syn,
            dec_lik=m.dec_lik,
        )

    @staticmethod
    def tightening_path(m: DiscreteLatentModel, x: int, ts: Sequence[float]) -> List[float]:
        """Full semantic KL along (1−t)·q + t·posterior."""
        posterior = SviEngine.true_syn_posterior(m, SviEngine._block(m, x))
        q = m.enc_syn[x]
        return [
            kl_divergence(FiniteDistribution((1.0 - t) * q + t * posterior.probs), posterior)
            for t in ts
        ]
