"""
Rate-Distortion(-Perception) Solvers
====================================
Numerical coding limits on finite alphabets:

  * R(D)   : Blahut–Arimoto alternating minimisation (log domain), with slope
             bisection to hit a distortion target.
  * R(D,P) : min I(X;X̂) s.t. E[Δ] ≤ D and KL(p_X ‖ p_X̂) ≤ P over row-stochastic
             channels (SLSQP with seeded restarts, best feasible kept).
  * R(𝒳)   : the synonymous rate, equal to the semantic entropy H_s.

Also exposes the Lagrangian RDP loss λ_r·I + λ_d·E[Δ] + λ_p·d(p_X, p_X̂) and its
unconstrained minimiser over softmax-parameterised channels.

All rates are reported in bits.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, softmax, xlogy

from utils.prob_core import (
    LN2,
    FiniteDistribution,
    JointDistribution,
    SynsetPartition,
    ValidationError,
    entropy,
    mutual_information,
    reject_unknown_keys,
    semantic_entropy,
    single_side_semantic_mi,
    validate_stochastic_rows,
)

logger = logging.getLogger(__name__)

FEASIBILITY_SLACK = 1e-6
DOMINANCE_SLACK = 1e-4
DEGENERATION_TOL = 1e-6
CERTIFIED_GAP = 1e-7
_LOG_FLOOR = 1e-300


class ConvergenceError(RuntimeError):
    """Solver exhausted its iteration budget; carries the last iterate."""

    def __init__(self, message: str, last_point: Optional["RdpPoint"] = None, gap: float = math.inf):
        super().__init__(message)
        self.error_type = "convergence"
        self.last_point = last_point
        self.gap = gap      # certified Lagrangian suboptimality of last_point, bits


class InfeasibleError(ValueError):
    """No channel meets the requested targets."""

    def __init__(self, message: str, binding: str, floor: float):
        super().__init__(message)
        self.error_type = "infeasible"
        self.binding = binding      # 'distortion' | 'perception'
        self.floor = floor


# ═══════════════════════════════════════════════════════════
# DOMAIN TYPES
# ═══════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class Channel:
    """Row-stochastic conditional p(x̂ | x)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = validate_stochastic_rows(self.rows, "channel")
        if rows.ndim != 2:
            raise ValidationError("channel must be a matrix", field="channel")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def identity(cls, size: int) -> "Channel":
        return cls(np.eye(size))

    @classmethod
    def constant(cls, n_src: int, output: FiniteDistribution) -> "Channel":
        """Output independent of the input: every row equals ``output``."""
        return cls(np.tile(output.probs, (n_src, 1)))

    def pushforward(self, p: FiniteDistribution) -> FiniteDistribution:
        return FiniteDistribution(p.probs @ self.rows)

    def joint(self, p: FiniteDistribution) -> JointDistribution:
        return JointDistribution.from_channel(p, self.rows)


@dataclass(frozen=True, eq=False)
class DistortionMatrix:
    """Non-negative Δ(x, x̂); square matrices must vanish on the diagonal."""

    delta: np.ndarray

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float)
        if delta.ndim != 2 or 0 in delta.shape:
            raise ValidationError("distortion must be a non-empty matrix", field="distortion")
        if not np.all(np.isfinite(delta)) or np.any(delta < 0):
            raise ValidationError("distortion entries must be finite and non-negative", field="distortion")
        if delta.shape[0] == delta.shape[1] and np.any(np.diag(delta) != 0):
            i = int(np.flatnonzero(np.diag(delta) != 0)[0])
            raise ValidationError(f"Δ({i},{i}) must be 0", field=f"distortion[{i}][{i}]")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def hamming(cls, size: int) -> "DistortionMatrix":
        return cls(1.0 - np.eye(size))

    @classmethod
    def squared_error(cls, values: Sequence[float]) -> "DistortionMatrix":
        v = np.asarray(values, dtype=float)
        return cls((v[:, None] - v[None, :]) ** 2)

    @classmethod
    def from_config(cls, cfg: Any, size: int, prefix: str = "distortion") -> "DistortionMatrix":
        if cfg == "hamming":
            return cls.hamming(size)
        if isinstance(cfg, dict):
            reject_unknown_keys(cfg, ("matrix",), f"{prefix}.")
            if "matrix" not in cfg:
                raise ValidationError("missing key 'matrix'", field=f"{prefix}.matrix")
            try:
                return cls(np.array(cfg["matrix"], dtype=float))
            except ValidationError as exc:
                raise ValidationError(str(exc), field=f"{prefix}.matrix") from exc
            except ValueError as exc:
                raise ValidationError(f"malformed matrix: {exc}", field=f"{prefix}.matrix") from exc
        raise ValidationError("distortion must be 'hamming' or {'matrix': [...]}", field=prefix)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.delta.shape)

    @property
    def is_square(self) -> bool:
        return self.delta.shape[0] == self.delta.shape[1]

    def expected(self, p: FiniteDistribution, rows: np.ndarray) -> float:
        """E[Δ] under p(x)·rows(x̂|x)."""
        return float(np.sum(p.probs[:, None] * rows * self.delta))

    def synset_expected(self, p: FiniteDistribution, s: SynsetPartition, recon: np.ndarray) -> float:
        """E[Δ] when x̂ is drawn from recon(· | block(x))."""
        if p.size != self.delta.shape[0] or s.alphabet_size != p.size:
            raise ValidationError("source, partition and distortion alphabets differ", field="distortion")
        recon = validate_stochastic_rows(recon, "recon")
        if recon.shape != (s.num_blocks, self.delta.shape[1]):
            raise ValidationError(
                f"recon must be {s.num_blocks}x{self.delta.shape[1]}, got {recon.shape[0]}x{recon.shape[1]}",
                field="recon",
            )
        return float(np.sum(p.probs[:, None] * recon[s.labels] * self.delta))

    def floor(self, p: FiniteDistribution) -> float:
        """Smallest achievable distortion, Σ_x p(x) min_x̂ Δ(x, x̂)."""
        return float(p.probs @ self.delta.min(axis=1))

    def zero_rate_distortion(self, p: FiniteDistribution) -> float:
        """Distortion of the best constant reconstruction."""
        return float((p.probs @ self.delta).min())


@dataclass(frozen=True, eq=False)
class RdpPoint:
    d_target: float
    p_target: float
    rate: float
    channel: Channel
    achieved_d: float
    achieved_p: float
    iters: int = 0
    converged: bool = True
    history: Tuple[float, ...] = field(default=(), repr=False)
    gap: float = float("nan")   # certified suboptimality bound in bits; NaN when unknown

    def to_row(self) -> Dict[str, Any]:
        return {
            "d_target": self.d_target,
            "p_target": self.p_target,
            "rate": self.rate,
            "achieved_d": self.achieved_d,
            "achieved_p": self.achieved_p,
            "iters": self.iters,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    tol: float = 1e-10
    lagrange_grid: Tuple[Tuple[float, float], ...] = ()
    seed: int = 0
    restarts: int = 5
    perception: str = "kl"
    check_dominance: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive", field="solver.tol")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1", field="solver.max_iters")
        if self.restarts < 1:
            raise ValidationError("restarts must be at least 1", field="solver.restarts")
        if self.perception not in ("kl", "tv"):
            raise ValidationError("perception must be 'kl' or 'tv'", field="solver.perception")
        grid = tuple((float(a), float(b)) for a, b in self.lagrange_grid)
        if any(a < 0 or b < 0 for a, b in grid):
            raise ValidationError("lagrange_grid multipliers must be non-negative", field="solver.lagrange_grid")
        object.__setattr__(self, "lagrange_grid", grid)

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "solver.") -> "SolverConfig":
        allowed = ("max_iters", "tol", "lagrange_grid", "seed", "restarts", "perception", "check_dominance")
        reject_unknown_keys(cfg, allowed, prefix)
        try:
            return cls(**{k: (tuple(map(tuple, v)) if k == "lagrange_grid" else v) for k, v in cfg.items()})
        except ValidationError as exc:
            raise ValidationError(str(exc), field=exc.field.replace("solver.", prefix, 1)) from exc
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed solver settings: {exc}", field=prefix.rstrip(".")) from exc


# ═══════════════════════════════════════════════════════════
# SHARED CHANNEL FUNCTIONALS (bits)
# ═══════════════════════════════════════════════════════════

def _channel_mi(p: np.ndarray, w: np.ndarray) -> float:
    r = p @ w
    joint = p[:, None] * w
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(joint > 0, w / np.maximum(r, _LOG_FLOOR)[None, :], 1.0)
    return max(0.0, float(np.sum(xlogy(joint, ratio)) / LN2))


def _perception(p: np.ndarray, r: np.ndarray, mode: str = "kl") -> float:
    """d(p_X, p_X̂); +inf when the reconstruction misses source support."""
    if mode == "tv":
        return float(0.5 * np.abs(p - r).sum())
    mask = p > 0
    if np.any(r[mask] <= 0):
        return float("inf")
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / r[mask])) / LN2))


def _clean_rows(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def _argmin_map(delta: np.ndarray) -> np.ndarray:
    rows = np.zeros_like(delta)
    rows[np.arange(delta.shape[0]), delta.argmin(axis=1)] = 1.0
    return rows


def _point_from_rows(
    p: FiniteDistribution,
    delta: DistortionMatrix,
    rows: np.ndarray,
    d_target: float,
    p_target: float,
    mode: str = "kl",
    iters: int = 0,
    converged: bool = True,
    history: Tuple[float, ...] = (),
    gap: float = float("nan"),
) -> RdpPoint:
    rows = _clean_rows(rows)
    r = p.probs @ rows
    achieved_p = _perception(p.probs, r, mode) if delta.is_square else float("nan")
    return RdpPoint(
        d_target=float(d_target),
        p_target=float(p_target),
        rate=_channel_mi(p.probs, rows),
        channel=Channel(rows),
        achieved_d=delta.expected(p, rows),
        achieved_p=achieved_p,
        iters=int(iters),
        converged=bool(converged),
        history=tuple(history),
        gap=float(gap),
    )


def _mix_to_target(
    p: FiniteDistribution,
    delta: DistortionMatrix,
    d_target: float,
    below: RdpPoint,
    above: Optional[RdpPoint],
) -> RdpPoint:
    """Blend a channel under the distortion target with one over it so that E[Δ] hits the target."""
    if above is None or not below.achieved_d < d_target < above.achieved_d:
        return below
    theta = (above.achieved_d - d_target) / (above.achieved_d - below.achieved_d)
    rows = theta * below.channel.rows + (1.0 - theta) * above.channel.rows
    mixed = _point_from_rows(p, delta, rows, d_target, float("inf"))
    return mixed if mixed.rate <= below.rate else below


def rdp_loss(
    channel: Channel,
    p: FiniteDistribution,
    delta: DistortionMatrix,
    lambda_r: float = 1.0,
    lambda_d: float = 1.0,
    lambda_p: float = 1.0,
    perception: str = "kl",
) -> float:
    """λ_r·I(X;X̂) + λ_d·E[Δ] + λ_p·d(p_X, p_X̂)."""
    rows = channel.rows
    return (
        lambda_r * _channel_mi(p.probs, rows)
        + lambda_d * delta.expected(p, rows)
        + lambda_p * _perception(p.probs, p.probs @ rows, perception)
    )


class RdpOptimizer:
    """Solvers for R(D), R(D,P) and the synonymous rate."""

    # ═══════════════════════════════════════════════════════
    # CLASSICAL R(D)
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def blahut_arimoto(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        slope: float,
        cfg: SolverConfig = SolverConfig(),
        init_marginal: Optional[np.ndarray] = None,
    ) -> RdpPoint:
        """
        Fixed point of the alternating updates for slope s ≤ 0 (nats per unit
        distortion). s = −inf returns the zero-distortion corner directly.

        ``history`` records the Lagrangian I − s·D after every full update; it is
        non-increasing. ``gap`` bounds how far the last Lagrangian sits above its
        minimum: with c_j = Σ_x p(x)·e^{s·Δ(x,j)} / Z_x it is max_j c_j − 1.
        Iteration stops when the gap or the rate change drops below ``tol``.
        """
        if slope > 0:
            raise ValidationError(f"slope must be <= 0, got {slope}", field="slope")
        if delta.shape[0] != p.size:
            raise ValidationError(
                f"distortion has {delta.shape[0]} rows for a source of size {p.size}", field="distortion"
            )

        if math.isinf(slope):
            rows = np.eye(p.size) if delta.is_square else _argmin_map(delta.delta)
            point = _point_from_rows(p, delta, rows, 0.0, float("inf"))
            return RdpPoint(
                d_target=point.achieved_d, p_target=float("inf"), rate=point.rate, channel=point.channel,
                achieved_d=point.achieved_d, achieved_p=point.achieved_p, gap=0.0,
            )

        n_hat = delta.shape[1]
        px = p.probs
        with np.errstate(divide="ignore"):
            log_px = np.log(px)
        q = np.full(n_hat, 1.0 / n_hat) if init_marginal is None else np.asarray(init_marginal, dtype=float)
        scaled = slope * delta.delta
        history: List[float] = []
        prev_rate = None
        rows = np.tile(q, (p.size, 1))
        gap = math.inf

        for it in range(1, cfg.max_iters + 1):
            with np.errstate(divide="ignore"):
                log_q = np.log(q)
            log_rows = scaled + log_q[None, :]
            log_z = logsumexp(log_rows, axis=1, keepdims=True)
            log_rows -= log_z
            rows = np.exp(log_rows)
            log_c = logsumexp(log_px[:, None] + scaled - log_z, axis=0)
            gap = max(0.0, float(np.expm1(log_c.max())) / LN2)
            q = px @ rows

            rate = _channel_mi(px, rows)
            distortion = float(np.sum(px[:, None] * rows * delta.delta))
            history.append(rate - slope * distortion / LN2)

            if gap < cfg.tol or (prev_rate is not None and abs(rate - prev_rate) < cfg.tol):
                logger.debug(f"BA converged after {it} iterations (slope={slope:g}, R={rate:.6f}, gap={gap:.2e})")
                return _point_from_rows(
                    p, delta, rows, distortion, float("inf"), iters=it, converged=True, history=tuple(history),
                    gap=gap,
                )
            prev_rate = rate

        last = _point_from_rows(
            p, delta, rows, float("nan"), float("inf"), iters=cfg.max_iters, converged=False,
            history=tuple(history), gap=gap,
        )
        raise ConvergenceError(
            f"Blahut-Arimoto did not converge within {cfg.max_iters} iterations "
            f"(slope={slope:g}, gap={gap:.2e} bits)",
            last_point=last,
            gap=gap,
        )

    @staticmethod
    def _certified_ba(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        slope: float,
        cfg: SolverConfig,
        init_marginal: Optional[np.ndarray] = None,
    ) -> RdpPoint:
        """BA, keeping an unconverged iterate whose gap is below CERTIFIED_GAP."""
        try:
            return RdpOptimizer.blahut_arimoto(p, delta, slope, cfg, init_marginal=init_marginal)
        except ConvergenceError as exc:
            if exc.last_point is None or not exc.gap <= CERTIFIED_GAP:
                raise
            logger.debug(f"Accepting slow BA iterate at slope {slope:g} (gap={exc.gap:.2e} bits)")
            return exc.last_point

    @staticmethod
    def rate_distortion(
        p: FiniteDistribution, delta: DistortionMatrix, d_target: float, cfg: SolverConfig = SolverConfig()
    ) -> RdpPoint:
        """
        R(D) at a distortion target: BA with bisection on the slope.

        Every BA point at slope s gives the lower bound R(D) ≥ R_s − gap_s + s·(D − D_s).
        The upper bound is the channel mixing the two bracketing BA channels so
        that E[Δ] = D exactly. Bisection stops once the two agree within
        CERTIFIED_GAP.
        """
        d_min = delta.floor(p)
        d_max = delta.zero_rate_distortion(p)
        if d_target < d_min - 1e-12:
            raise InfeasibleError(
                f"distortion target {d_target:g} below the floor {d_min:g}", binding="distortion", floor=d_min
            )

        if d_target >= d_max:
            rows = np.zeros(delta.shape)
            rows[:, int((p.probs @ delta.delta).argmin())] = 1.0
            point = _point_from_rows(p, delta, rows, d_target, float("inf"))
            return RdpPoint(
                d_target=float(d_target), p_target=float("inf"), rate=0.0, channel=point.channel,
                achieved_d=point.achieved_d, achieved_p=point.achieved_p,
            )
        if d_target <= d_min:
            corner = RdpOptimizer.blahut_arimoto(p, delta, -math.inf, cfg)
            return RdpPoint(
                d_target=float(d_target), p_target=float("inf"), rate=corner.rate, channel=corner.channel,
                achieved_d=corner.achieved_d, achieved_p=corner.achieved_p,
            )

        lower = -math.inf

        def solve(s: float, init: Optional[np.ndarray] = None) -> RdpPoint:
            nonlocal lower
            pt = RdpOptimizer._certified_ba(p, delta, s, cfg, init_marginal=init)
            if math.isfinite(pt.gap):
                lower = max(lower, pt.rate - pt.gap + s * (d_target - pt.achieved_d) / LN2)
            return pt

        lo = -1.0
        above: Optional[RdpPoint] = None
        point = solve(lo)
        while point.achieved_d > d_target and lo > -1e6:
            above = point
            lo *= 2.0
            point = solve(lo)
        hi = 0.0
        best = point
        candidate = _mix_to_target(p, delta, d_target, best, above)
        warm = point.channel.pushforward(p).probs

        for _ in range(200):
            if candidate.rate - lower <= CERTIFIED_GAP or hi - lo < 1e-13:
                break
            mid = 0.5 * (lo + hi)
            point = solve(mid, warm)
            if point.achieved_d > d_target:
                hi = mid
                above = point
            else:
                lo = mid
                best = point
                warm = point.channel.pushforward(p).probs
            candidate = _mix_to_target(p, delta, d_target, best, above)

        logger.debug(f"R({d_target:g}) in [{lower:.10f}, {candidate.rate:.10f}]")
        return RdpPoint(
            d_target=float(d_target), p_target=float("inf"), rate=candidate.rate, channel=candidate.channel,
            achieved_d=candidate.achieved_d, achieved_p=candidate.achieved_p, iters=best.iters,
            converged=best.converged, history=best.history, gap=max(0.0, candidate.rate - lower),
        )

    @staticmethod
    def rd_curve(
        p: FiniteDistribution, delta: DistortionMatrix, slopes: Sequence[float], cfg: SolverConfig = SolverConfig()
    ) -> List[RdpPoint]:
        return [RdpOptimizer.blahut_arimoto(p, delta, s, cfg) for s in slopes]

    # ═══════════════════════════════════════════════════════
    # R(D, P)
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def perception_floor(p: FiniteDistribution, delta: DistortionMatrix) -> float:
        """min E[Δ] over channels whose pushforward equals p_X (linear program)."""
        if not delta.is_square or delta.shape[0] != p.size:
            raise ValidationError("perfect perception needs a square distortion over the source alphabet",
                                  field="distortion")
        n = p.size
        cost = (p.probs[:, None] * delta.delta).ravel()
        a_rows = np.kron(np.eye(n), np.ones((1, n)))
        a_push = np.kron(p.probs[None, :], np.eye(n))
        res = linprog(
            cost,
            A_eq=np.vstack([a_rows, a_push]),
            b_eq=np.concatenate([np.ones(n), p.probs]),
            bounds=(0, None),
            method="highs",
        )
        if not res.success:
            raise ConvergenceError(f"perception floor LP failed: {res.message}")
        return max(0.0, float(res.fun))

    @staticmethod
    def _starting_channels(p: FiniteDistribution, delta: DistortionMatrix, cfg: SolverConfig) -> List[np.ndarray]:
        n, m = delta.shape
        rng = np.random.default_rng(cfg.seed)
        anchor = np.eye(n) if delta.is_square else _argmin_map(delta.delta)
        if delta.is_square:
            product = np.tile(p.probs, (n, 1))
        else:
            product = np.full((n, m), 1.0 / m)
        starts = [0.5 * anchor + 0.5 * product, 0.9 * anchor + 0.1 * np.full((n, m), 1.0 / m)]
        while len(starts) < cfg.restarts:
            starts.append(rng.dirichlet(np.ones(m), size=n))
        return [_clean_rows(0.98 * s + 0.02 / m) for s in starts[: cfg.restarts]]

    @staticmethod
    def rdp_solve(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        d_target: float,
        p_target: float,
        cfg: SolverConfig = SolverConfig(),
    ) -> RdpPoint:
        """
        min I(X;X̂) s.t. E[Δ] ≤ d_target and d(p_X, p_X̂) ≤ p_target.

        p_target = inf disables the perception constraint; p_target = 0 is
        imposed as the linear pushforward equality.
        """
        if d_target < 0 or p_target < 0:
            raise ValidationError("targets must be non-negative", field="targets")
        if delta.shape[0] != p.size:
            raise ValidationError(
                f"distortion has {delta.shape[0]} rows for a source of size {p.size}", field="distortion"
            )
        perceptual = not math.isinf(p_target)
        if perceptual and not delta.is_square:
            raise ValidationError("a perception budget needs reconstruction alphabet == source alphabet",
                                  field="distortion")
        mode = cfg.perception
        n, m = delta.shape
        px = p.probs

        d_min = delta.floor(p)
        if d_target < d_min - 1e-12:
            raise InfeasibleError(
                f"distortion target {d_target:g} below the floor {d_min:g}", binding="distortion", floor=d_min
            )
        if perceptual and p_target == 0:
            floor = RdpOptimizer.perception_floor(p, delta)
            if d_target < floor - 1e-9:
                raise InfeasibleError(
                    f"distortion target {d_target:g} below the perfect-perception floor {floor:g}",
                    binding="perception", floor=floor,
                )

        # Independent copy: zero rate, perfect perception.
        if delta.is_square:
            product = np.tile(px, (n, 1))
            if delta.expected(p, product) <= d_target:
                logger.debug("Product channel feasible; R(D,P) = 0")
                return _point_from_rows(p, delta, product, d_target, p_target, mode)

        # Zero distortion with strictly positive off-diagonal cost pins the channel to the identity.
        if delta.is_square and d_target <= d_min and np.all(delta.delta + np.eye(n) > 0):
            corner = _point_from_rows(p, delta, np.eye(n), d_target, p_target, mode)
            if corner.achieved_p <= p_target + FEASIBILITY_SLACK:
                return corner

        weighted = px[:, None] * delta.delta

        def objective(w):
            rows = np.clip(w.reshape(n, m), 0.0, None)
            r = px @ rows
            with np.errstate(divide="ignore"):
                grad = px[:, None] * (np.log(np.maximum(rows, 1e-12)) - np.log(np.maximum(r, 1e-12))[None, :])
            return _channel_mi(px, rows), (grad / LN2).ravel()

        constraints = [
            {"type": "eq", "fun": lambda w: w.reshape(n, m).sum(axis=1) - 1.0,
             "jac": lambda w: np.kron(np.eye(n), np.ones((1, m)))},
            {"type": "ineq", "fun": lambda w: d_target - float(np.sum(weighted * w.reshape(n, m))),
             "jac": lambda w: -weighted.ravel()},
        ]
        if perceptual and p_target == 0:
            push = np.kron(px[None, :], np.eye(m))[:-1]
            constraints.append({"type": "eq", "fun": lambda w: push @ w - px[:-1], "jac": lambda w: push})
        elif perceptual and mode == "kl":
            def kl_slack(w):
                r = np.maximum(px @ np.clip(w.reshape(n, m), 0.0, None), _LOG_FLOOR)
                mask = px > 0
                return p_target - float(np.sum(px[mask] * np.log(px[mask] / r[mask])) / LN2)

            def kl_slack_jac(w):
                r = np.maximum(px @ np.clip(w.reshape(n, m), 0.0, None), 1e-12)
                return (px[:, None] * (px / r)[None, :] / LN2).ravel()

            constraints.append({"type": "ineq", "fun": kl_slack, "jac": kl_slack_jac})
        elif perceptual:
            constraints.append({"type": "ineq",
                                "fun": lambda w: p_target - _perception(px, px @ w.reshape(n, m), "tv")})

        best: Optional[RdpPoint] = None
        fallback: Optional[RdpPoint] = None
        for k, start in enumerate(RdpOptimizer._starting_channels(p, delta, cfg)):
            res = minimize(
                objective,
                start.ravel(),
                jac=True,
                method="SLSQP",
                bounds=[(0.0, 1.0)] * (n * m),
                constraints=constraints,
                options={"maxiter": cfg.max_iters, "ftol": 1e-14},
            )
            point = _point_from_rows(
                p, delta, res.x.reshape(n, m), d_target, p_target, mode, iters=res.nit, converged=res.success
            )
            feasible = (
                point.achieved_d <= d_target + FEASIBILITY_SLACK
                and (not perceptual or point.achieved_p <= p_target + FEASIBILITY_SLACK)
            )
            logger.debug(f"restart {k}: R={point.rate:.8f} D={point.achieved_d:.6g} P={point.achieved_p:.6g} "
                         f"feasible={feasible} ({res.message})")
            if feasible and (best is None or point.rate < best.rate):
                best = point
            elif not feasible and fallback is None:
                fallback = point

        if best is None:
            raise ConvergenceError(
                f"no restart reached a feasible channel for D={d_target:g}, P={p_target:g}", last_point=fallback
            )

        if cfg.check_dominance:
            rd = RdpOptimizer.rate_distortion(p, delta, d_target, cfg)
            if best.rate < rd.rate - DOMINANCE_SLACK:
                logger.warning(f"R(D,P)={best.rate:.6f} below R(D)={rd.rate:.6f} at D={d_target:g}")
        return best

    @staticmethod
    def minimize_rdp_loss(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        lambda_d: float,
        lambda_p: float,
        cfg: SolverConfig = SolverConfig(),
        lambda_r: float = 1.0,
    ) -> RdpPoint:
        """
        Unconstrained minimum of λ_r·I + λ_d·E[Δ] + λ_p·KL over softmax-parameterised
        rows. The returned point carries its achieved (D, P) as its targets.
        """
        if not delta.is_square or delta.shape[0] != p.size:
            raise ValidationError("the Lagrangian form needs a square distortion over the source alphabet",
                                  field="distortion")
        n = p.size
        px = p.probs

        def loss(theta):
            rows = softmax(theta.reshape(n, n), axis=1)
            r = np.maximum(px @ rows, 1e-300)
            mask = px > 0
            value = (
                lambda_r * _channel_mi(px, rows)
                + lambda_d * float(np.sum(px[:, None] * rows * delta.delta))
                + lambda_p * float(np.sum(px[mask] * np.log(px[mask] / r[mask])) / LN2)
            )
            grad_rows = (
                lambda_r * px[:, None] * (np.log(np.maximum(rows, 1e-300)) - np.log(r)[None, :]) / LN2
                + lambda_d * px[:, None] * delta.delta
                - lambda_p * px[:, None] * (px / r)[None, :] / LN2
            )
            grad_theta = rows * (grad_rows - np.sum(rows * grad_rows, axis=1, keepdims=True))
            return value, grad_theta.ravel()

        best: Optional[RdpPoint] = None
        best_loss = math.inf
        for start in RdpOptimizer._starting_channels(p, delta, cfg):
            res = minimize(loss, np.log(start).ravel(), jac=True, method="L-BFGS-B",
                           options={"maxiter": cfg.max_iters, "gtol": 1e-12, "ftol": 1e-15})
            rows = softmax(res.x.reshape(n, n), axis=1)
            if res.fun < best_loss:
                best_loss = float(res.fun)
                point = _point_from_rows(p, delta, rows, 0.0, 0.0, "kl", iters=res.nit, converged=res.success)
                best = RdpPoint(
                    d_target=point.achieved_d, p_target=point.achieved_p, rate=point.rate, channel=point.channel,
                    achieved_d=point.achieved_d, achieved_p=point.achieved_p, iters=point.iters,
                    converged=point.converged,
                )
        return best

    # ═══════════════════════════════════════════════════════
    # SYNONYMOUS LIMITS AND DEGENERATIONS
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def synonymous_rate(p: FiniteDistribution, s: SynsetPartition) -> float:
        """Semantic-lossless operating point: min I(X; X̂̃) = H_s(X̃)."""
        return semantic_entropy(p, s)

    @staticmethod
    def synonymous_loss(
        source: FiniteDistribution,
        partition: SynsetPartition,
        recon: np.ndarray,
        metric: DistortionMatrix,
        lam: float,
        lambda_d_prime: float,
    ) -> Dict[str, float]:
        """
        λ_d*·E[Δ] + λ_p*·KL(p_X ‖ p_X̂) + H_s with λ_d* = (λ+1)·λ_d′ and λ_p* = λ+1,
        where x̂ ~ recon(· | block(x)).
        """
        if lam < 0 or lambda_d_prime < 0:
            raise ValidationError("loss weights must be non-negative", field="lam")
        distortion = metric.synset_expected(source, partition, recon)
        recon = np.asarray(recon, dtype=float)
        pushforward = source.probs @ recon[partition.labels]
        divergence = _perception(source.probs, pushforward, "kl") if metric.is_square else float("nan")
        rate = semantic_entropy(source, partition)
        lambda_d_star = (lam + 1.0) * lambda_d_prime
        lambda_p_star = lam + 1.0
        return {
            "rate": rate,
            "distortion": distortion,
            "divergence": divergence,
            "lambda_d": lambda_d_star,
            "lambda_p": lambda_p_star,
            "loss": rate + lambda_d_star * distortion + lambda_p_star * divergence,
        }

    @staticmethod
    def semantic_mi_comparison(j: JointDistribution, s_out: SynsetPartition) -> Dict[str, Any]:
        i_semantic = single_side_semantic_mi(j, s_out)
        i_syntactic = mutual_information(j)
        holds = i_semantic <= i_syntactic + 1e-12
        if not holds:
            logger.warning(f"I(X;X̂̃)={i_semantic:.15f} exceeds I(X;X̂)={i_syntactic:.15f}")
        return {"i_semantic": i_semantic, "i_syntactic": i_syntactic, "holds": holds}

    @staticmethod
    def degeneration_suite(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        s: SynsetPartition,
        cfg: SolverConfig = SolverConfig(),
        d_check: Optional[float] = None,
    ) -> Dict[str, Any]:
        """
        (a) singleton synsets: synonymous rate == zero-distortion RD corner
        (b) disabled perception: R(D,P) == R(D)
        (c) synonymous rate <= H(p)

        Failures are flagged in the report, never raised.
        """
        assertions: List[Dict[str, Any]] = []

        def record(name: str, tolerance: float, check) -> None:
            try:
                residual, values = check()
                passed = residual <= tolerance
            except Exception as exc:  # flagged, not propagated
                residual, values, passed = float("inf"), {"error": str(exc)}, False
            if not passed:
                logger.warning(f"Degeneration check '{name}' failed (residual={residual:.3e})")
            assertions.append({"name": name, "passed": bool(passed), "residual": float(residual),
                               "tolerance": tolerance, **values})

        def singleton_corner():
            syn = RdpOptimizer.synonymous_rate(p, SynsetPartition.singletons(p.size))
            corner = RdpOptimizer.blahut_arimoto(p, delta, -math.inf, cfg).rate
            return abs(syn - corner), {"synonymous_rate": syn, "rd_corner": corner}

        def disabled_perception():
            d_mid = d_check
            if d_mid is None:
                d_mid = 0.5 * (delta.floor(p) + delta.zero_rate_distortion(p))
            rd = RdpOptimizer.rate_distortion(p, delta, d_mid, cfg)
            rdp = RdpOptimizer.rdp_solve(p, delta, rd.achieved_d, math.inf, cfg)
            return abs(rdp.rate - rd.rate), {"d": rd.achieved_d, "rd_rate": rd.rate, "rdp_rate": rdp.rate}

        def below_entropy():
            syn = RdpOptimizer.synonymous_rate(p, s)
            h = entropy(p)
            return max(0.0, syn - h), {"synonymous_rate": syn, "entropy": h}

        record("singleton_synonymous_rate_equals_rd_corner", DEGENERATION_TOL, singleton_corner)
        record("rdp_without_perception_equals_rd", DEGENERATION_TOL, disabled_perception)
        record("synonymous_rate_below_entropy", DEGENERATION_TOL, below_entropy)

        return {"passed": all(a["passed"] for a in assertions), "assertions": assertions}

    # ═══════════════════════════════════════════════════════
    # EXHAUSTIVE ORACLE
    # ═══════════════════════════════════════════════════════

    @staticmethod
    def brute_force_rdp(
        p: FiniteDistribution,
        delta: DistortionMatrix,
        d_target: float,
        p_target: float,
        levels: int = 12,
        refinements: int = 14,
        radius: int = 3,
    ) -> float:
        """
        Exhaustive search over a simplex grid of channels, then repeated local
        grids of shrinking step around the incumbent. Alphabets up to 3 only.
        Returns the smallest rate among exactly feasible grid channels.
        """
        n, m = delta.shape
        if n > 3 or m > 3:
            raise ValidationError("brute-force search is limited to alphabets of size <= 3", field="distortion")
        px = p.probs
        perceptual = not math.isinf(p_target)

        def evaluate(batch: np.ndarray) -> np.ndarray:
            r = np.einsum("x,bxy->by", px, batch)
            joint = px[None, :, None] * batch
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(joint > 0, batch / np.maximum(r, _LOG_FLOOR)[:, None, :], 1.0)
            rate = np.sum(xlogy(joint, ratio), axis=(1, 2)) / LN2
            dist = np.einsum("bxy,xy->b", batch, px[:, None] * delta.delta)
            ok = dist <= d_target
            if perceptual:
                mask = px > 0
                with np.errstate(divide="ignore"):
                    kl = np.sum(px[mask] * np.log(px[mask] / r[:, mask]), axis=1) / LN2
                ok &= np.nan_to_num(kl, nan=np.inf) <= p_target
            return np.where(ok, rate, np.inf)

        grid = np.array([c for c in itertools.product(range(levels + 1), repeat=m) if sum(c) == levels],
                        dtype=float) / levels
        best_rate, best = math.inf, None
        tails = np.array(list(itertools.product(range(len(grid)), repeat=n - 1)), dtype=int)
        for head in range(len(grid)):
            batch = np.empty((len(tails), n, m))
            batch[:, 0, :] = grid[head]
            for k in range(1, n):
                batch[:, k, :] = grid[tails[:, k - 1]]
            rates = evaluate(batch)
            i = int(np.argmin(rates))
            if rates[i] < best_rate:
                best_rate, best = float(rates[i]), batch[i].copy()

        if best is None:
            return math.inf

        offsets = np.array(list(itertools.product(range(-radius, radius + 1), repeat=m - 1)), dtype=float)
        step = 1.0 / levels
        for _ in range(refinements):
            step /= 2.0
            improved = True
            while improved:
                improved = False
                row_moves = []
                for k in range(n):
                    cand = np.empty((len(offsets), m))
                    cand[:, : m - 1] = best[k, : m - 1] + step * offsets
                    cand[:, m - 1] = 1.0 - cand[:, : m - 1].sum(axis=1)
                    row_moves.append(cand[np.all(cand >= 0, axis=1)])
                combos = itertools.product(*[range(len(c)) for c in row_moves])
                idx = np.array(list(combos), dtype=int)
                batch = np.stack([row_moves[k][idx[:, k]] for k in range(n)], axis=1)
                rates = evaluate(batch)
                i = int(np.argmin(rates))
                if rates[i] < best_rate - 1e-15:
                    best_rate, best = float(rates[i]), batch[i].copy()
                    improved = True
        return max(0.0, best_rate)
