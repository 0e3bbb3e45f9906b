"""
Synonymous Codec
================
Deterministic synonymous encoder, static range coding of the synonymous
representation, and a detail-sampling decoder.

    x  ──► block(x) ──► range coder ──► bytes ──► block ids ──► x̂ ~ sampler(· | block)
            └─ detail index (position inside the block) is discarded

Every run is seeded: one child stream draws source symbols, the other draws
the decoder's detail choices.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from services.rdp_optimizer import DistortionMatrix
from utils.prob_core import (
    FiniteDistribution,
    JointDistribution,
    SynsetPartition,
    ValidationError,
    kl_divergence,
    mutual_information,
    reject_unknown_keys,
    semantic_entropy,
    single_side_semantic_mi,
    validate_stochastic_rows,
    within_block_conditional,
)
from utils.range_coder import DecodeError, FrequencyTable, RangeDecoder, RangeEncoder

logger = logging.getLogger(__name__)

FORMAT_MAGIC = b"SRDP"
FORMAT_VERSION = 1
FREQ_TOTAL = 1 << 15
SAMPLER_MODES = ("strict", "free")

# magic, version, alphabet_size, partition_hash, symbol_count, num_blocks
_HEADER = struct.Struct(">4sBHQQH")
_PAYLOAD_LEN = struct.Struct(">I")
_HASH_OFFSET_BITS = 8 * 7


class EncodeError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(message)
        self.error_type = "encode"
        self.position = position


class ModelMismatchError(DecodeError):
    """Stream was produced under a different partition."""

    def __init__(self, message: str, bit_offset: int = _HASH_OFFSET_BITS):
        super().__init__(message, bit_offset)
        self.error_type = "model_mismatch"


# ═══════════════════════════════════════════════════════════
# DOMAIN TYPES
# ═══════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class CodecModel:
    source: FiniteDistribution
    partition: SynsetPartition
    detail_sampler: Optional[np.ndarray] = None
    seed: int = 0
    sampler_mode: str = "strict"

    def __post_init__(self):
        s = self.partition
        if s.alphabet_size != self.source.size:
            raise ValidationError(
                f"partition covers {s.alphabet_size} indices, source has {self.source.size}", field="partition.blocks"
            )
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValidationError(f"sampler_mode must be one of {SAMPLER_MODES}", field="codec.sampler_mode")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValidationError("seed must fit in 64 unsigned bits", field="codec.seed")

        if self.detail_sampler is None:
            sampler = within_block_conditional(self.source, s)
        else:
            sampler = np.array(self.detail_sampler, dtype=float)
        sampler = validate_stochastic_rows(sampler, "codec.sampler")
        if sampler.shape != (s.num_blocks, s.alphabet_size):
            raise ValidationError(
                f"sampler must be {s.num_blocks}x{s.alphabet_size}, got {sampler.shape[0]}x{sampler.shape[1]}",
                field="codec.sampler",
            )
        if self.sampler_mode == "strict":
            outside = (sampler > 0) & (s.indicator().T == 0)
            if np.any(outside):
                k, i = (int(v) for v in np.argwhere(outside)[0])
                raise ValidationError(
                    f"strict sampler puts mass on symbol {i} outside block {k}", field=f"codec.sampler[{k}][{i}]"
                )
        object.__setattr__(self, "detail_sampler", sampler)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_config(
        cls, cfg: Dict[str, Any], source: FiniteDistribution, partition: SynsetPartition, prefix: str = "codec."
    ) -> "CodecModel":
        reject_unknown_keys(cfg, ("n", "symbols_path", "seed", "sampler_mode", "sampler"), prefix)
        sampler = cfg.get("sampler")
        return cls(
            source=source,
            partition=partition,
            detail_sampler=None if sampler is None else np.array(sampler, dtype=float),
            seed=cfg.get("seed", 0),
            sampler_mode=cfg.get("sampler_mode", "strict"),
        )

    def streams(self) -> Tuple[np.random.Generator, np.random.Generator]:
        """Fresh (source, decoder) generators; identical for identical seeds."""
        source_ss, decoder_ss = np.random.SeedSequence(self.seed).spawn(2)
        return np.random.default_rng(source_ss), np.random.default_rng(decoder_ss)


@dataclass(frozen=True)
class BitStream:
    alphabet_size: int
    partition_hash: int
    symbol_count: int
    freq_table: Tuple[int, ...]
    payload: bytes
    version: int = FORMAT_VERSION

    @property
    def bit_length(self) -> int:
        return 8 * len(self.payload)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            FORMAT_MAGIC, self.version, self.alphabet_size, self.partition_hash, self.symbol_count,
            len(self.freq_table),
        )
        freqs = struct.pack(f">{len(self.freq_table)}H", *self.freq_table)
        return head + freqs + _PAYLOAD_LEN.pack(len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitStream":
        if len(data) < _HEADER.size:
            raise DecodeError("truncated header", bit_offset=8 * len(data))
        magic, version, alphabet, phash, count, k = _HEADER.unpack_from(data, 0)
        if magic != FORMAT_MAGIC:
            raise DecodeError(f"bad magic {magic!r}", bit_offset=0)
        if version != FORMAT_VERSION:
            raise DecodeError(f"unsupported version {version}", bit_offset=32)
        pos = _HEADER.size
        end = pos + 2 * k + _PAYLOAD_LEN.size
        if len(data) < end:
            raise DecodeError("truncated frequency table", bit_offset=8 * len(data))
        freqs = struct.unpack_from(f">{k}H", data, pos)
        if k == 0 or min(freqs) < 1 or sum(freqs) != FREQ_TOTAL:
            raise DecodeError("frequency table must hold positive counts summing to 2^15", bit_offset=8 * pos)
        (length,) = _PAYLOAD_LEN.unpack_from(data, pos + 2 * k)
        if len(data) != end + length:
            raise DecodeError(
                f"payload length {length} disagrees with {len(data) - end} remaining bytes", bit_offset=8 * end
            )
        return cls(alphabet, phash, count, tuple(freqs), bytes(data[end:]), version)


@dataclass(frozen=True)
class RunReport:
    n: int
    rate_bits_per_symbol: float
    h_s: float
    expected_distortion: float
    empirical_kl_source_vs_recon: float
    empirical_mi_syntactic: float
    empirical_mi_semantic: float
    detail_bits_per_symbol: float = 0.0
    payload_bits: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "rate_bits_per_symbol": self.rate_bits_per_symbol,
            "h_s": self.h_s,
            "expected_distortion": self.expected_distortion,
            "empirical_kl_source_vs_recon": self.empirical_kl_source_vs_recon,
            "empirical_mi_syntactic": self.empirical_mi_syntactic,
            "empirical_mi_semantic": self.empirical_mi_semantic,
            "detail_bits_per_symbol": self.detail_bits_per_symbol,
            "payload_bits": self.payload_bits,
        }


def quantize_block_frequencies(block_probs: Sequence[float]) -> Tuple[int, ...]:
    """u16 counts summing to 2^15, each at least 1; rounding error lands on the largest."""
    probs = np.asarray(block_probs, dtype=float)
    if probs.size > FREQ_TOTAL:
        raise ValidationError(f"{probs.size} blocks cannot share {FREQ_TOTAL} counts", field="partition.blocks")
    counts = np.maximum(1, np.rint(probs * FREQ_TOTAL)).astype(np.int64)
    diff = FREQ_TOTAL - int(counts.sum())
    if diff >= 0:
        counts[int(np.argmax(counts))] += diff
    else:
        for _ in range(-diff):
            counts[int(np.argmax(counts))] -= 1
    return tuple(int(c) for c in counts)


class SynonymousCodec:
    """Encoder, decoder and measurement for one CodecModel at a time."""

    @staticmethod
    def sample_source(model: CodecModel, n: int) -> np.ndarray:
        if n < 1:
            raise ValidationError(f"n must be at least 1, got {n}", field="codec.n")
        rng, _ = model.streams()
        return rng.choice(model.source.size, size=n, p=model.source.probs)

    @staticmethod
    def split_representation(symbols: Sequence[int], model: CodecModel) -> Tuple[np.ndarray, np.ndarray]:
        """(block id, position inside the block) for every symbol."""
        x = np.asarray(symbols)
        size = model.source.size
        if x.ndim != 1:
            raise EncodeError("symbols must be a flat sequence", position=0)
        if x.size and not np.issubdtype(x.dtype, np.integer):
            raise EncodeError("symbols must be integers", position=0)
        bad = (x < 0) | (x >= size)
        if np.any(bad):
            pos = int(np.flatnonzero(bad)[0])
            raise EncodeError(f"symbol {int(x[pos])} at position {pos} is outside 0..{size - 1}", position=pos)
        s = model.partition
        offsets = np.zeros(size, dtype=np.intp)
        for blk in s.blocks:
            offsets[list(blk)] = np.arange(len(blk))
        return s.labels[x], offsets[x]

    @staticmethod
    def block_table(model: CodecModel) -> FrequencyTable:
        return FrequencyTable(quantize_block_frequencies(model.partition.collapse(model.source.probs)))

    @staticmethod
    def encode(symbols: Sequence[int], model: CodecModel) -> BitStream:
        blocks, _ = SynonymousCodec.split_representation(symbols, model)
        table = SynonymousCodec.block_table(model)
        enc = RangeEncoder()
        for b in blocks.tolist():
            enc.encode(b, table)
        payload = enc.finish()
        logger.info(f"Encoded {blocks.size} symbols into {len(payload)} payload bytes")
        return BitStream(
            alphabet_size=model.source.size,
            partition_hash=model.partition.fingerprint(),
            symbol_count=int(blocks.size),
            freq_table=table.counts,
            payload=payload,
        )

    @staticmethod
    def decode_blocks(bs: BitStream, model: CodecModel) -> np.ndarray:
        if bs.partition_hash != model.partition.fingerprint():
            raise ModelMismatchError(
                f"stream partition hash {bs.partition_hash:#018x} != model {model.partition.fingerprint():#018x}"
            )
        if bs.alphabet_size != model.source.size or len(bs.freq_table) != model.partition.num_blocks:
            raise ModelMismatchError("stream alphabet or block count disagrees with the model", bit_offset=40)
        table = FrequencyTable(bs.freq_table)
        dec = RangeDecoder(bs.payload)
        out = np.empty(bs.symbol_count, dtype=np.intp)
        for i in range(bs.symbol_count):
            out[i] = dec.decode(table)
        return out

    @staticmethod
    def decode(bs: BitStream, model: CodecModel) -> np.ndarray:
        blocks = SynonymousCodec.decode_blocks(bs, model)
        _, rng = model.streams()
        sampler = model.detail_sampler
        cdf = np.cumsum(sampler, axis=1)
        for k, row in enumerate(sampler):
            cdf[k, int(np.flatnonzero(row > 0)[-1]):] = 1.0
        u = rng.random(blocks.size)
        recon = (u[:, None] >= cdf[blocks]).sum(axis=1)
        logger.info(f"Decoded {blocks.size} symbols")
        return recon.astype(np.intp)

    # ═══════════════════════════════════════════════════════════
    # EXACT TABLES
    # ═══════════════════════════════════════════════════════════

    @staticmethod
    def codec_joint(model: CodecModel) -> JointDistribution:
        """p(x, x̂) = p(x) · sampler(x̂ | block(x))."""
        rows = model.detail_sampler[model.partition.labels]
        return JointDistribution.from_channel(model.source, rows)

    @staticmethod
    def pushforward(model: CodecModel) -> FiniteDistribution:
        return FiniteDistribution(model.source.probs @ model.detail_sampler[model.partition.labels])

    @staticmethod
    def preserves_source(model: CodecModel, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(SynonymousCodec.pushforward(model).probs - model.source.probs)) <= tol)

    # ═══════════════════════════════════════════════════════════
    # MEASUREMENT
    # ═══════════════════════════════════════════════════════════

    @staticmethod
    def measure(
        symbols: Sequence[int],
        recon: Sequence[int],
        model: CodecModel,
        bitstream: Optional[BitStream] = None,
        metric: Optional[DistortionMatrix] = None,
    ) -> RunReport:
        x = np.asarray(symbols, dtype=np.intp)
        xh = np.asarray(recon, dtype=np.intp)
        if x.shape != xh.shape or x.ndim != 1 or x.size == 0:
            raise ValidationError("symbols and recon must be equal-length non-empty sequences", field="recon")
        size = model.source.size
        metric = metric or DistortionMatrix.hamming(size)
        bs = bitstream or SynonymousCodec.encode(x, model)
        s = model.partition
        n = int(x.size)

        counts = np.zeros((size, size))
        np.add.at(counts, (x, xh), 1.0)
        joint = JointDistribution(counts / n)

        src_hist = np.bincount(x, minlength=size) + 1.0
        rec_hist = np.bincount(xh, minlength=size) + 1.0
        smoothed_kl = kl_divergence(
            FiniteDistribution(src_hist / src_hist.sum()), FiniteDistribution(rec_hist / rec_hist.sum())
        )

        block_mass = s.collapse(model.source.probs)
        with np.errstate(divide="ignore"):
            detail = -np.log2(model.source.probs[x] / block_mass[s.labels[x]])

        report = RunReport(
            n=n,
            rate_bits_per_symbol=bs.bit_length / n,
            h_s=semantic_entropy(model.source, s),
            expected_distortion=float(metric.delta[x, xh].mean()),
            empirical_kl_source_vs_recon=max(0.0, smoothed_kl),
            empirical_mi_syntactic=mutual_information(joint),
            empirical_mi_semantic=single_side_semantic_mi(joint, s),
            detail_bits_per_symbol=float(detail.mean()),
            payload_bits=bs.bit_length,
        )
        logger.info(
            f"Run n={n}: {report.rate_bits_per_symbol:.4f} bits/symbol (H_s={report.h_s:.4f}), "
            f"distortion={report.expected_distortion:.4f}"
        )
        return report
