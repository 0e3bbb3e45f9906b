"""
Finite Probability Core
=======================
Exact primitives over finite alphabets: distributions, synset partitions,
joint tables, the classical Shannon measures and their synset-level
(semantic) counterparts.

Every measure reports bits unless called with ``unit="nats"``.
0·log 0 is taken as 0; p·log(p/0) with p > 0 raises SupportError.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.special import entr

logger = logging.getLogger(__name__)

PROB_TOL = 1e-9
LN2 = math.log(2.0)
_UNIT_DIVISORS = {"bits": LN2, "nats": 1.0}

_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class ValidationError(ValueError):
    """Invalid distribution, partition or conditional table."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.error_type = "validation"
        self.field = field


class SupportError(ValueError):
    """Absolute-continuity violation: positive mass against zero reference mass."""

    def __init__(self, message: str, index: Any):
        super().__init__(message)
        self.error_type = "support"
        self.index = index


def unit_divisor(unit: str) -> float:
    """Natural-log divisor that converts nats into the requested unit."""
    try:
        return _UNIT_DIVISORS[unit]
    except KeyError:
        raise ValidationError(f"Unknown unit '{unit}', expected 'bits' or 'nats'", field="unit")


def _readonly(values: Any, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def reject_unknown_keys(cfg: Dict[str, Any], allowed: Iterable[str], prefix: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ValidationError(f"Unknown key '{unknown[0]}'", field=f"{prefix}{unknown[0]}")


def validate_stochastic_rows(table: Any, name: str, tol: float = PROB_TOL) -> np.ndarray:
    """Check that the last axis of ``table`` holds probability vectors; return a read-only copy."""
    arr = np.array(table, dtype=float)
    if arr.ndim < 2 or 0 in arr.shape:
        raise ValidationError(f"{name} must be a non-empty table of rows", field=name)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries", field=name)
    if np.any(arr < 0):
        idx = tuple(int(i) for i in np.argwhere(arr < 0)[0])
        raise ValidationError(f"{name}{list(idx)} is negative", field=f"{name}{list(idx)}")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(
            f"{name} row {list(idx)} sums to {float(sums[idx])!r}, expected 1",
            field=f"{name}{list(idx)}",
        )
    arr.setflags(write=False)
    return arr


# ═══════════════════════════════════════════════════════════
# DOMAIN TYPES
# ═══════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Probability vector over a finite alphabet indexed 0..n-1."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValidationError("probs must be a non-empty vector", field="probs")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("probs contains non-finite entries", field="probs")
        if np.any(probs < 0):
            idx = int(np.flatnonzero(probs < 0)[0])
            raise ValidationError(f"probs[{idx}] = {probs[idx]!r} is negative", field=f"probs[{idx}]")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ValidationError(f"probs sum to {total!r}, expected 1", field="probs")
        object.__setattr__(self, "probs", _readonly(probs))

    @classmethod
    def from_list(cls, probs: Sequence[float], renormalize: bool = False) -> "FiniteDistribution":
        arr = np.array(probs, dtype=float)
        if renormalize:
            total = float(arr.sum()) if arr.ndim == 1 and arr.size else 0.0
            if not total > 0 or np.any(arr < 0):
                raise ValidationError("cannot renormalize: need non-negative mass with positive total", field="probs")
            arr = arr / total
        return cls(arr)

    @classmethod
    def uniform(cls, size: int) -> "FiniteDistribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def random(
        cls, rng: np.random.Generator, size: int, concentration: float = 0.7, sparsity: float = 0.0
    ) -> "FiniteDistribution":
        """Dirichlet draw; with ``sparsity`` > 0 each entry is zeroed with that probability."""
        probs = rng.dirichlet(np.full(size, concentration))
        if sparsity > 0 and size > 1:
            probs[rng.random(size) < sparsity] = 0.0
            if probs.sum() == 0:
                probs[0] = 1.0
        return cls(probs / probs.sum())

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "") -> "FiniteDistribution":
        if not isinstance(cfg, dict):
            raise ValidationError("distribution config must be an object with 'probs'", field=prefix.rstrip("."))
        reject_unknown_keys(cfg, ("probs", "renormalize"), prefix)
        if "probs" not in cfg:
            raise ValidationError("missing key 'probs'", field=f"{prefix}probs")
        try:
            return cls.from_list(cfg["probs"], renormalize=bool(cfg.get("renormalize", False)))
        except ValidationError as exc:
            raise ValidationError(str(exc), field=f"{prefix}{exc.field or 'probs'}") from exc

    def to_config(self) -> Dict[str, Any]:
        return {"probs": [float(p) for p in self.probs]}

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class SynsetPartition:
    """
    Disjoint, non-empty blocks covering 0..n-1.

    Blocks are canonicalized on construction: members sorted, blocks ordered
    by smallest member. Two partitions are equal iff their canonical forms are.
    """

    blocks: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        canon: List[Tuple[int, ...]] = []
        for b, block in enumerate(self.blocks):
            members = []
            for m in block:
                if isinstance(m, bool) or not isinstance(m, (int, np.integer)):
                    raise ValidationError(f"blocks[{b}] member {m!r} is not an integer index", field=f"blocks[{b}]")
                members.append(int(m))
            if not members:
                raise ValidationError(f"blocks[{b}] is empty", field=f"blocks[{b}]")
            canon.append(tuple(sorted(members)))
        if not canon:
            raise ValidationError("partition has no blocks", field="blocks")
        canon.sort(key=lambda blk: blk[0])

        flat = [i for blk in canon for i in blk]
        n = len(flat)
        if sorted(flat) != list(range(n)):
            seen = set()
            for i in flat:
                if i in seen:
                    raise ValidationError(f"index {i} appears in more than one block", field="blocks")
                seen.add(i)
            missing = sorted(set(range(n)) - seen)
            raise ValidationError(
                f"blocks must cover 0..{n - 1} exactly; index {missing[0] if missing else max(flat)} breaks coverage",
                field="blocks",
            )

        labels = np.empty(n, dtype=np.intp)
        for k, blk in enumerate(canon):
            labels[list(blk)] = k
        labels.setflags(write=False)
        object.__setattr__(self, "blocks", tuple(canon))
        object.__setattr__(self, "_labels", labels)

    # ── constructors ────────────────────────────────────────

    @classmethod
    def singletons(cls, size: int) -> "SynsetPartition":
        return cls(tuple((i,) for i in range(size)))

    @classmethod
    def single_block(cls, size: int) -> "SynsetPartition":
        return cls((tuple(range(size)),))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "SynsetPartition":
        groups: Dict[int, List[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(i)
        return cls(tuple(tuple(g) for g in groups.values()))

    @classmethod
    def random(cls, rng: np.random.Generator, size: int) -> "SynsetPartition":
        k = int(rng.integers(1, size + 1))
        return cls.from_labels(rng.integers(0, k, size=size))

    @classmethod
    def from_config(cls, cfg: Dict[str, Any], prefix: str = "") -> "SynsetPartition":
        if not isinstance(cfg, dict):
            raise ValidationError("partition config must be an object with 'blocks'", field=prefix.rstrip("."))
        reject_unknown_keys(cfg, ("blocks",), prefix)
        if "blocks" not in cfg:
            raise ValidationError("missing key 'blocks'", field=f"{prefix}blocks")
        try:
            return cls(tuple(tuple(b) for b in cfg["blocks"]))
        except ValidationError as exc:
            raise ValidationError(str(exc), field=f"{prefix}{exc.field or 'blocks'}") from exc
        except TypeError as exc:
            raise ValidationError(f"blocks must be a list of index lists: {exc}", field=f"{prefix}blocks") from exc

    def to_config(self) -> Dict[str, Any]:
        return {"blocks": [list(b) for b in self.blocks]}

    # ── structure ───────────────────────────────────────────

    @property
    def alphabet_size(self) -> int:
        return int(self._labels.size)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def labels(self) -> np.ndarray:
        """Block id of every alphabet index."""
        return self._labels

    @property
    def block_sizes(self) -> np.ndarray:
        return np.array([len(b) for b in self.blocks], dtype=np.intp)

    @property
    def is_singleton(self) -> bool:
        return self.num_blocks == self.alphabet_size

    def block_of(self, index: int) -> int:
        return int(self._labels[index])

    def indicator(self) -> np.ndarray:
        """(alphabet × blocks) 0/1 membership matrix."""
        ind = np.zeros((self.alphabet_size, self.num_blocks))
        ind[np.arange(self.alphabet_size), self._labels] = 1.0
        return ind

    def collapse(self, probs: np.ndarray) -> np.ndarray:
        """Sum a mass vector over each block."""
        return np.bincount(self._labels, weights=np.asarray(probs, dtype=float), minlength=self.num_blocks)

    def merge(self, a: int, b: int) -> "SynsetPartition":
        """Coarsen by joining blocks ``a`` and ``b``."""
        if a == b:
            return self
        joined = self.blocks[a] + self.blocks[b]
        rest = [blk for k, blk in enumerate(self.blocks) if k not in (a, b)]
        return SynsetPartition(tuple(rest + [joined]))

    # ── hashing for bitstream headers ───────────────────────

    def canonical_bytes(self) -> bytes:
        return ";".join(",".join(str(i) for i in blk) for blk in self.blocks).encode("ascii")

    def fingerprint(self) -> int:
        """64-bit FNV-1a over the canonical block list."""
        h = _FNV64_OFFSET
        for byte in self.canonical_bytes():
            h ^= byte
            h = (h * _FNV64_PRIME) & _MASK64
        return h


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Probability mass over (row alphabet × column alphabet)."""

    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != 2 or 0 in mass.shape:
            raise ValidationError("mass must be a non-empty matrix", field="mass")
        if not np.all(np.isfinite(mass)):
            raise ValidationError("mass contains non-finite entries", field="mass")
        if np.any(mass < 0):
            idx = [int(i) for i in np.argwhere(mass < 0)[0]]
            raise ValidationError(f"mass{idx} is negative", field=f"mass{idx}")
        total = float(mass.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ValidationError(f"joint mass sums to {total!r}, expected 1", field="mass")
        object.__setattr__(self, "mass", _readonly(mass))

    @classmethod
    def from_channel(cls, source: FiniteDistribution, rows: np.ndarray) -> "JointDistribution":
        rows = validate_stochastic_rows(rows, "channel")
        if rows.shape[0] != source.size:
            raise ValidationError(
                f"channel has {rows.shape[0]} rows for a source of size {source.size}", field="channel"
            )
        return cls(source.probs[:, None] * rows)

    @classmethod
    def product(cls, p: FiniteDistribution, q: FiniteDistribution) -> "JointDistribution":
        return cls(np.outer(p.probs, q.probs))

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.mass.shape)

    def row_marginal(self) -> FiniteDistribution:
        return FiniteDistribution(self.mass.sum(axis=1))

    def col_marginal(self) -> FiniteDistribution:
        return FiniteDistribution(self.mass.sum(axis=0))

    def collapse_columns(self, s_out: SynsetPartition) -> "JointDistribution":
        _check_partition(self.shape[1], s_out, "column alphabet")
        return JointDistribution(self.mass @ s_out.indicator())

    def collapse_rows(self, s_in: SynsetPartition) -> "JointDistribution":
        _check_partition(self.shape[0], s_in, "row alphabet")
        return JointDistribution(s_in.indicator().T @ self.mass)


def _check_partition(size: int, s: SynsetPartition, what: str = "alphabet") -> None:
    if s.alphabet_size != size:
        raise ValidationError(
            f"partition covers {s.alphabet_size} indices but the {what} has {size}", field="blocks"
        )


def _check_same_alphabet(p: FiniteDistribution, q: FiniteDistribution) -> None:
    if p.size != q.size:
        raise ValidationError(f"alphabet sizes differ: {p.size} vs {q.size}", field="probs")


# ═══════════════════════════════════════════════════════════
# CLASSICAL MEASURES
# ═══════════════════════════════════════════════════════════

def entropy(p: FiniteDistribution, unit: str = "bits") -> float:
    """Shannon entropy H(p)."""
    return float(entr(p.probs).sum() / unit_divisor(unit))


def kl_divergence(p: FiniteDistribution, q: FiniteDistribution, unit: str = "bits") -> float:
    """D_KL(p ‖ q); raises SupportError at the first index with p > 0 and q = 0."""
    _check_same_alphabet(p, q)
    bad = (p.probs > 0) & (q.probs == 0)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise SupportError(f"p[{idx}] = {p.probs[idx]!r} has no support under q", index=idx)
    mask = p.probs > 0
    val = np.sum(p.probs[mask] * np.log(p.probs[mask] / q.probs[mask]))
    return float(val / unit_divisor(unit))


def total_variation(p: FiniteDistribution, q: FiniteDistribution) -> float:
    _check_same_alphabet(p, q)
    return float(0.5 * np.abs(p.probs - q.probs).sum())


def mutual_information(j: JointDistribution, unit: str = "bits") -> float:
    """I(X;Y) of a joint table; rounding below zero is clamped."""
    mass = j.mass
    outer = np.outer(mass.sum(axis=1), mass.sum(axis=0))
    mask = mass > 0
    val = np.sum(mass[mask] * np.log(mass[mask] / outer[mask]))
    return max(0.0, float(val / unit_divisor(unit)))


# ═══════════════════════════════════════════════════════════
# SEMANTIC (SYNSET-LEVEL) MEASURES
# ═══════════════════════════════════════════════════════════

def block_distribution(p: FiniteDistribution, s: SynsetPartition) -> FiniteDistribution:
    """Synset probabilities P(block) = Σ_{i∈block} p_i."""
    _check_partition(p.size, s)
    return FiniteDistribution(s.collapse(p.probs))


def semantic_entropy(p: FiniteDistribution, s: SynsetPartition, unit: str = "bits") -> float:
    """H_s: entropy of the block-probability distribution."""
    _check_partition(p.size, s)
    return float(entr(s.collapse(p.probs)).sum() / unit_divisor(unit))


def conditional_entropy_given_blocks(p: FiniteDistribution, s: SynsetPartition, unit: str = "bits") -> float:
    """H(X | X̃), the detail information a synonymous encoder drops."""
    return max(0.0, entropy(p, unit) - semantic_entropy(p, s, unit))


def partial_semantic_kl(
    q: FiniteDistribution, p: FiniteDistribution, s: SynsetPartition, unit: str = "bits"
) -> float:
    """
    Σ_blocks Σ_{i∈block} q_i log(q_i / P_p(block)).

    May be negative; never exceeds kl_divergence(q, p).
    """
    _check_same_alphabet(q, p)
    _check_partition(q.size, s)
    per_symbol = s.collapse(p.probs)[s.labels]
    bad = (q.probs > 0) & (per_symbol == 0)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise SupportError(
            f"block {s.block_of(idx)} has zero reference mass but q[{idx}] = {q.probs[idx]!r}", index=idx
        )
    mask = q.probs > 0
    val = np.sum(q.probs[mask] * np.log(q.probs[mask] / per_symbol[mask]))
    return float(val / unit_divisor(unit))


def single_side_semantic_mi(j: JointDistribution, s_out: SynsetPartition, unit: str = "bits") -> float:
    """I(X; X̂̃): mutual information after collapsing the output to block identity."""
    return mutual_information(j.collapse_columns(s_out), unit)


def semantic_self_information(
    p: FiniteDistribution, s: SynsetPartition, block_id: int, unit: str = "bits"
) -> float:
    """−log P(block): ideal code length of one synonymous representation."""
    _check_partition(p.size, s)
    mass = float(s.collapse(p.probs)[block_id])
    if mass <= 0:
        raise SupportError(f"block {block_id} has zero probability", index=block_id)
    return -math.log(mass) / unit_divisor(unit)


def detail_self_information(p: FiniteDistribution, s: SynsetPartition, symbol: int, unit: str = "bits") -> float:
    """−log p(x | block(x)): the conditional self-information of the detail component."""
    _check_partition(p.size, s)
    px = float(p.probs[symbol])
    if px <= 0:
        raise SupportError(f"symbol {symbol} has zero probability", index=symbol)
    mass = float(s.collapse(p.probs)[s.block_of(symbol)])
    return -math.log(px / mass) / unit_divisor(unit)


def within_block_conditional(p: FiniteDistribution, s: SynsetPartition) -> np.ndarray:
    """
    (blocks × alphabet) table of p(x | block).

    Zero-mass blocks fall back to uniform over their members so every row
    stays stochastic and supported inside its block.
    """
    _check_partition(p.size, s)
    table = np.zeros((s.num_blocks, s.alphabet_size))
    masses = s.collapse(p.probs)
    for k, blk in enumerate(s.blocks):
        idx = list(blk)
        if masses[k] > 0:
            table[k, idx] = p.probs[idx] / masses[k]
        else:
            table[k, idx] = 1.0 / len(idx)
    return table
