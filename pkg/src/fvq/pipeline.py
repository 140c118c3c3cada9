"""Compression/decompression chain composition and the CPZ1 bitstream.

Stage order on the compress side: cyclic-prefix removal (downlink only) ->
decimation -> block scaling -> quantization -> entropy coding. Decompression
walks the inverse chain and restores the original sample count and rate.

CPZ1 frame layout (little-endian):

    offset  size  field
    0       4     magic b"CPZ1"
    4       1     version (1)
    5       1     section count
    6       2     reserved
    8       8     profile digest (uint64)
    16      8     original sample count M
    24      8     post-frontend sample count M_dec
    32      8     sample-rate numerator
    40      8     sample-rate denominator
    48      8     vectorizer permutation seed
    56      8     raw-mode scale (float64, 0 when unused)
    64      20*n  section descriptors {kind u8, pad u8[3], item count u64,
                  bit length u64}
    ...           section payloads, each padded to a byte boundary

Per-section padding bits are zeros and are counted in the descriptors, not in
compression-ratio accounting; the fixed header is O(1) per stream and is
excluded from CR as well.

Theorem-style rate accounting: the composed ratio is
1 / (1/(CR_CPR * CR_DEC * CR_Q) + side-info term). The block-scaling side
information is emitted per N_BS *decimated* samples, so the side term used
for the runtime accounting check is Q_BS / (2 Q0 N_BS CR_CPR CR_DEC);
`theorem_cr` exposes the textbook composition with the side term expressed
per N_BS input samples.
"""

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import entropy as ec
from . import frontend, vq_core
from .bitio import pack_bit_array, pack_fixed, unpack_bit_array, unpack_fixed
from .errors import (
    ContractViolationError,
    DigestMismatchError,
    MalformedBitstreamError,
)
from .iqstream import IQStream
from .metrics import EvalReport, evm_fd, evm_td
from .msvq import MsvqCodebook, dequantize_msvq, quantize_msvq
from .upmgq import (
    UpmgqCodebook,
    UpmgqConfig,
    UpmgqIndices,
    dequantize_upmgq,
    quantize_upmgq,
)
from .vectorizer import VectorBatch, VectorLayout, devectorize, vectorize
from .vq_core import Codebook, SearchCounter
from .waveform import subcarrier_indices

CPZ1_MAGIC = b"CPZ1"
_CPZ1_VERSION = 1

DOWNLINK = "downlink"
UPLINK = "uplink"

SEC_SCALE = 1
SEC_VQ_IDX = 2
SEC_MSVQ_I1 = 3
SEC_MSVQ_I2 = 4
SEC_SIGN = 5
SEC_G2 = 6
SEC_G3 = 7
SEC_RAW = 8


@dataclass
class VqSpec:
    l_vq: int = 2
    q_vq: int = 6

    kind = "vq"

    @property
    def scale_bits(self):
        return self.q_vq


@dataclass
class MsvqSpec:
    q1: int = 3
    q2: int = 3
    l: int = 2

    kind = "msvq"

    @property
    def scale_bits(self):
        return self.q1 + self.q2


@dataclass
class UpmgqSpec:
    theta: int = 0
    q_high: int = 4
    l: int = 2
    q_low: int = 4
    q_scale: int = 6  # block-scaling dynamic range (bits)
    g3_entropy: bool = False

    kind = "upmgq"

    @property
    def scale_bits(self):
        return self.q_scale

    def config(self, q0: int) -> UpmgqConfig:
        return UpmgqConfig(self.theta, self.q_high, self.l, self.q_low, q0)


@dataclass
class RawSpec:
    """Test hook: q0-bit fixed-point passthrough, no codebook."""

    kind = "raw"

    @property
    def scale_bits(self):
        return 15


@dataclass
class BlockScalingSpec:
    n_bs: int = 32
    q_bs: int = 8


_QUANTIZER_KINDS = {"vq": VqSpec, "msvq": MsvqSpec, "upmgq": UpmgqSpec,
                    "raw": RawSpec}


@dataclass
class CompressionProfile:
    link: str = UPLINK
    l_sym: int = 1024
    l_cp: int = 128
    used_subcarriers: int = 600
    cp_removal: bool = False
    decimation: frontend.ResamplerSpec = None
    block_scaling: BlockScalingSpec = None
    quantizer: object = field(default_factory=VqSpec)
    entropy_coding: bool = True
    vector_method: VectorLayout = VectorLayout.METHOD1
    vector_seed: int = 0
    q0: int = 15

    def __post_init__(self):
        if self.link not in (DOWNLINK, UPLINK):
            raise ContractViolationError(f"unknown link {self.link!r}")
        if self.cp_removal and self.link != DOWNLINK:
            raise ContractViolationError(
                "cyclic-prefix removal is a downlink-only stage (uplink "
                "symbol timing is unknown at the radio unit)"
            )
        self.vector_method = VectorLayout(self.vector_method)
        if self.q0 < 1:
            raise ContractViolationError("q0 must be positive")

    def utilized_band(self) -> np.ndarray:
        return subcarrier_indices(self.l_sym, self.used_subcarriers)

    def to_dict(self) -> dict:
        d = {
            "link": self.link,
            "l_sym": self.l_sym,
            "l_cp": self.l_cp,
            "used_subcarriers": self.used_subcarriers,
            "cp_removal": self.cp_removal,
            "decimation": None,
            "block_scaling": None,
            "quantizer": dict(kind=self.quantizer.kind, **vars(self.quantizer)),
            "entropy_coding": self.entropy_coding,
            "vector_method": self.vector_method.value,
            "vector_seed": self.vector_seed,
            "q0": self.q0,
        }
        if self.decimation is not None:
            d["decimation"] = vars(self.decimation)
        if self.block_scaling is not None:
            d["block_scaling"] = vars(self.block_scaling)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionProfile":
        d = dict(d)
        if d.get("decimation"):
            d["decimation"] = frontend.ResamplerSpec(**d["decimation"])
        if d.get("block_scaling"):
            d["block_scaling"] = BlockScalingSpec(**d["block_scaling"])
        q = d.get("quantizer")
        if isinstance(q, dict):
            q = dict(q)
            kind = q.pop("kind")
            if kind not in _QUANTIZER_KINDS:
                raise ContractViolationError(f"unknown quantizer {kind!r}")
            d["quantizer"] = _QUANTIZER_KINDS[kind](**q)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ContractViolationError(f"unknown profile fields {extra}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> int:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return int.from_bytes(
            hashlib.blake2b(canon.encode(), digest_size=8).digest(), "little"
        )


@dataclass
class StageStats:
    """Per-stage bit accounting for one compress call."""

    m_in: int = 0
    m_after_cp: int = 0
    m_dec: int = 0
    n_vectors: int = 0
    cr_cpr: float = 1.0
    cr_dec: float = 1.0
    quantizer_gain: float = 1.0  # CR_VQ * CR_EC, or the Eq.-(10)-style gain
    cr_vq: float = 1.0
    cr_ec: float = 1.0
    l_huff_emitted: float = 0.0  # bits per quantized vector, as emitted
    l_high: float = 0.0  # UPMGQ: emitted G2 bits per vector
    l_low: float = 0.0  # UPMGQ: emitted G3 bits per component
    side_info_bits: int = 0
    quantizer_bits: int = 0
    payload_bits: int = 0
    section_bits: dict = field(default_factory=dict)
    search_counters: dict = field(default_factory=dict)
    stored_codewords: int = 0

    @property
    def cr_measured(self) -> float:
        if self.payload_bits == 0:
            return float("inf")
        return 2 * self.q0 * self.m_in / self.payload_bits

    q0: int = 15


@dataclass
class Section:
    kind: int
    item_count: int
    bit_length: int
    payload: bytes


@dataclass
class Bitstream:
    profile_digest: int
    m_in: int
    m_dec: int
    sample_rate: Fraction
    perm_seed: int
    raw_scale: float
    sections: list
    stats: StageStats = None  # attached accounting, not serialized

    def section(self, kind: int) -> Section:
        for s in self.sections:
            if s.kind == kind:
                return s
        raise MalformedBitstreamError(f"missing section kind {kind}")

    def to_bytes(self) -> bytes:
        head = CPZ1_MAGIC + struct.pack(
            "<BBHQQQQQQd",
            _CPZ1_VERSION,
            len(self.sections),
            0,
            self.profile_digest,
            self.m_in,
            self.m_dec,
            self.sample_rate.numerator,
            self.sample_rate.denominator,
            self.perm_seed,
            self.raw_scale,
        )
        parts = [head]
        for s in self.sections:
            if len(s.payload) != -(-s.bit_length // 8):
                raise ContractViolationError("section payload/bit length skew")
            parts.append(
                struct.pack("<B3xQQ", s.kind, s.item_count, s.bit_length)
            )
        for s in self.sections:
            parts.append(s.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 64:
            raise MalformedBitstreamError("truncated CPZ1 header")
        if data[:4] != CPZ1_MAGIC:
            raise MalformedBitstreamError("bad CPZ1 magic")
        (version, n_sections, _pad, digest, m_in, m_dec, num, den,
         perm_seed, raw_scale) = struct.unpack_from("<BBHQQQQQQd", data, 4)
        if version != _CPZ1_VERSION:
            raise MalformedBitstreamError(f"unsupported CPZ1 version {version}")
        if den == 0:
            raise MalformedBitstreamError("zero sample-rate denominator")
        off = 64
        descs = []
        for _ in range(n_sections):
            if off + 20 > len(data):
                raise MalformedBitstreamError("truncated section descriptors")
            kind, count, bits = struct.unpack_from("<B3xQQ", data, off)
            descs.append((kind, count, bits))
            off += 20
        sections = []
        for kind, count, bits in descs:
            nbytes = -(-bits // 8)
            payload = data[off : off + nbytes]
            if len(payload) != nbytes:
                raise MalformedBitstreamError(
                    f"section kind {kind} truncated: expected {nbytes} bytes"
                )
            sections.append(Section(kind, count, bits, payload))
            off += nbytes
        if off != len(data):
            raise MalformedBitstreamError("trailing bytes after last section")
        return cls(
            digest, m_in, m_dec, Fraction(int(num), int(den)),
            perm_seed, raw_scale, sections,
        )


def _vq_table(codebook: Codebook) -> ec.HuffmanTable:
    return ec.table_from_counts(codebook.usage_counts, codebook.size)


def _msvq_tables(cb: MsvqCodebook):
    t1 = ec.table_from_counts(cb.stage1.usage_counts, cb.stage1.size)
    pooled = np.sum([c.usage_counts for c in cb.stage2], axis=0)
    t2 = ec.table_from_counts(pooled, cb.stage2[0].size)
    return t1, t2


def _index_section(kind, indices, table, fixed_width, use_ec):
    if use_ec:
        payload, bits = ec.encode(table, indices)
    else:
        payload, bits = pack_fixed(indices, fixed_width)
    return Section(kind, len(indices), bits, payload)


def _decode_index_section(sec, table, fixed_width, use_ec):
    if use_ec:
        return ec.decode(table, sec.payload, sec.item_count)
    return unpack_fixed(sec.payload, fixed_width, sec.item_count).astype(
        np.int64
    )


def _check_geometry(profile, codebooks):
    q = profile.quantizer
    if q.kind == "vq":
        if not isinstance(codebooks, Codebook):
            raise ContractViolationError("vq profile needs a Codebook")
        if (codebooks.l_vq, codebooks.q_vq) != (q.l_vq, q.q_vq):
            raise ContractViolationError(
                f"codebook geometry ({codebooks.l_vq},{codebooks.q_vq}) != "
                f"profile ({q.l_vq},{q.q_vq})"
            )
    elif q.kind == "msvq":
        if not isinstance(codebooks, MsvqCodebook):
            raise ContractViolationError("msvq profile needs an MsvqCodebook")
        if (codebooks.q1, codebooks.q2, codebooks.l) != (q.q1, q.q2, q.l):
            raise ContractViolationError("MSVQ geometry mismatch")
    elif q.kind == "upmgq":
        if not isinstance(codebooks, UpmgqCodebook):
            raise ContractViolationError("upmgq profile needs an UpmgqCodebook")
        if codebooks.theta != q.theta or codebooks.q_low != q.q_low:
            raise ContractViolationError("UPMGQ geometry mismatch")
        if codebooks.high_vq.l_vq != q.l or codebooks.high_vq.q_vq != q.q_high:
            raise ContractViolationError("UPMGQ G2 geometry mismatch")
    elif q.kind == "raw":
        if codebooks is not None:
            raise ContractViolationError("raw profile takes no codebook")
    else:
        raise ContractViolationError(f"unknown quantizer kind {q.kind!r}")


def compress(
    stream: IQStream,
    profile: CompressionProfile,
    codebooks=None,
    counter: SearchCounter = None,
) -> Bitstream:
    """Run the full chain and emit a framed bitstream with attached stats."""
    _check_geometry(profile, codebooks)
    stats = StageStats(m_in=len(stream), q0=profile.q0)
    x = stream

    if profile.cp_removal:
        x = frontend.remove_cp(x, profile.l_sym, profile.l_cp)
        stats.cr_cpr = frontend.cp_removal_gain(profile.l_sym, profile.l_cp)
    stats.m_after_cp = len(x)

    if profile.decimation is not None:
        x = frontend.resample(x, profile.decimation, frontend.DECIMATE)
        stats.cr_dec = profile.decimation.decimation_gain
    stats.m_dec = len(x)

    sections = []
    if profile.block_scaling is not None:
        bs = profile.block_scaling
        x, factors = frontend.block_scale(
            x, bs.n_bs, bs.q_bs, profile.quantizer.scale_bits
        )
        payload, bits = pack_fixed(factors.factors, bs.q_bs)
        sections.append(Section(SEC_SCALE, len(factors.factors), bits, payload))
        stats.side_info_bits = bits

    raw_scale = 0.0
    q = profile.quantizer
    if q.kind == "vq":
        batch = vectorize(x, profile.vector_method, q.l_vq, profile.vector_seed)
        idx = vq_core.quantize_batch(codebooks, batch.vectors, counter)
        stats.n_vectors = len(idx)
        sections.append(
            _index_section(
                SEC_VQ_IDX, idx, _vq_table(codebooks) if profile.entropy_coding
                else None, q.l_vq * q.q_vq, profile.entropy_coding,
            )
        )
        stats.stored_codewords = codebooks.size
        if counter is not None:
            stats.search_counters["vq"] = counter
    elif q.kind == "msvq":
        batch = vectorize(x, profile.vector_method, q.l, profile.vector_seed)
        i1, i2 = quantize_msvq(codebooks, batch.vectors, counter)
        stats.n_vectors = len(i1)
        t1, t2 = _msvq_tables(codebooks) if profile.entropy_coding else (None, None)
        sections.append(
            _index_section(SEC_MSVQ_I1, i1, t1, q.q1 * q.l, profile.entropy_coding)
        )
        sections.append(
            _index_section(SEC_MSVQ_I2, i2, t2, q.q2 * q.l, profile.entropy_coding)
        )
        stats.stored_codewords = codebooks.stored_codewords
        if counter is not None:
            stats.search_counters["msvq"] = counter
    elif q.kind == "upmgq":
        cfg = q.config(profile.q0)
        g2_counter = SearchCounter() if counter is not None else None
        g3_counter = SearchCounter() if counter is not None else None
        ind = _quantize_upmgq_counted(codebooks, cfg, x, g2_counter, g3_counter)
        stats.n_vectors = len(ind.g2_indices)
        sections.append(
            Section(
                SEC_SIGN,
                ind.component_count,
                ind.component_count,
                pack_bit_array(ind.sign_negative),
            )
        )
        sections.append(
            _index_section(
                SEC_G2, ind.g2_indices, codebooks.huffman_high,
                q.q_high * q.l, profile.entropy_coding,
            )
        )
        sections.append(_g3_section(ind.g3_codes, q))
        if counter is not None:
            counter.add(g2_counter.distance_evals, g2_counter.items)
            counter.add(g3_counter.distance_evals, g3_counter.items)
            stats.search_counters["upmgq_g2"] = g2_counter
            stats.search_counters["upmgq_g3"] = g3_counter
        stats.stored_codewords = codebooks.high_vq.size + len(codebooks.low_sq)
    else:  # raw q0-bit fixed-point passthrough
        comps = np.concatenate([x.samples.real, x.samples.imag])
        peak = float(np.max(np.abs(comps))) if comps.size else 0.0
        half = 1 << (profile.q0 - 1)
        raw_scale = (half - 1) / peak if peak > 0 else 1.0
        codes = np.round(comps * raw_scale).astype(np.int64) + half
        codes = np.clip(codes, 0, 2 * half - 1)
        payload, bits = pack_fixed(codes, profile.q0)
        sections.append(Section(SEC_RAW, len(codes), bits, payload))
        stats.n_vectors = len(codes)

    stats.section_bits = {s.kind: s.bit_length for s in sections}
    stats.quantizer_bits = sum(
        s.bit_length for s in sections if s.kind != SEC_SCALE
    )
    stats.payload_bits = stats.quantizer_bits + stats.side_info_bits
    _fill_gain_stats(stats, profile)

    bits = Bitstream(
        profile.digest(),
        len(stream),
        stats.m_dec,
        stream.sample_rate,
        profile.vector_seed,
        raw_scale,
        sections,
        stats,
    )
    return bits


def _quantize_upmgq_counted(cb, cfg, x, g2_counter, g3_counter):
    # quantize_upmgq counts G2 per vector and G3 per component in one
    # counter; split the sections so each amortizes over its own unit.
    if g2_counter is None:
        return quantize_upmgq(cb, cfg, x)
    ind = quantize_upmgq(cb, cfg, x)
    n_vec = len(ind.g2_indices)
    g2_counter.add(cb.high_vq.size * n_vec, n_vec)
    g3_counter.add(len(cb.low_sq) * ind.component_count, ind.component_count)
    return ind


def _g3_section(codes, q: UpmgqSpec) -> Section:
    if q.g3_entropy:
        table = ec.build_huffman(ec.estimate_pmf(codes, 1 << q.q_low))
        head = ec.serialize_table(table)
        payload, bits = ec.encode(table, codes)
        return Section(
            SEC_G3, len(codes), len(head) * 8 + bits, head + payload
        )
    if q.q_low == 0:
        return Section(SEC_G3, len(codes), 0, b"")
    payload, bits = pack_fixed(codes, q.q_low)
    return Section(SEC_G3, len(codes), bits, payload)


def _fill_gain_stats(stats: StageStats, profile: CompressionProfile):
    q = profile.quantizer
    q0 = profile.q0
    if q.kind == "raw":
        stats.quantizer_gain = 1.0
        return
    if q.kind == "upmgq":
        n_vec = max(stats.n_vectors, 1)
        n_comp = max(stats.section_bits.get(SEC_SIGN, 0), 1)
        stats.l_high = stats.section_bits[SEC_G2] / n_vec
        stats.l_low = stats.section_bits[SEC_G3] / n_comp
        stats.quantizer_gain = q0 / (1.0 + stats.l_high / q.l + stats.l_low)
        return
    if q.kind == "vq":
        l, width = q.l_vq, q.l_vq * q.q_vq
        idx_bits = stats.section_bits[SEC_VQ_IDX]
    else:
        l, width = q.l, (q.q1 + q.q2) * q.l
        idx_bits = stats.section_bits[SEC_MSVQ_I1] + stats.section_bits[SEC_MSVQ_I2]
    stats.l_huff_emitted = idx_bits / max(stats.n_vectors, 1)
    stats.cr_vq = q0 * l / width
    stats.cr_ec = (
        width / stats.l_huff_emitted if stats.l_huff_emitted > 0 else 1.0
    )
    stats.quantizer_gain = stats.cr_vq * stats.cr_ec


def theorem_cr(
    cr_cpr: float,
    cr_dec: float,
    cr_vq: float,
    cr_ec: float,
    q_bs: int = 0,
    n_bs: int = 1,
    q0: int = 15,
) -> float:
    """Composed rate trade-off with the side-information term expressed per
    n_bs input samples; disabled stages contribute gain 1 and q_bs = 0."""
    inner = cr_cpr * cr_dec * cr_vq * cr_ec
    return 1.0 / (1.0 / inner + q_bs / (2.0 * q0 * n_bs))


def compression_ratio(profile: CompressionProfile, stats: StageStats) -> float:
    """Eq.-(5)-style composition from per-stage gains.

    The side-information term accounts for one q_bs-bit factor per n_bs
    samples of the decimated stream (where block scaling actually operates),
    so this formula value must match the measured payload-bit ratio
    2*q0*M / payload within 0.5% on every run.
    """
    inner = stats.cr_cpr * stats.cr_dec * stats.quantizer_gain
    side = 0.0
    if profile.block_scaling is not None:
        bs = profile.block_scaling
        side = bs.q_bs / (
            2.0 * profile.q0 * bs.n_bs * stats.cr_cpr * stats.cr_dec
        )
    return 1.0 / (1.0 / inner + side)


def decompress(
    bits, profile: CompressionProfile, codebooks=None
) -> IQStream:
    """Inverse chain; output has the original sample count and rate."""
    _check_geometry(profile, codebooks)
    if isinstance(bits, (bytes, bytearray)):
        bits = Bitstream.from_bytes(bytes(bits))
    if bits.profile_digest != profile.digest():
        raise DigestMismatchError(
            "bitstream was produced under a different profile"
        )
    rate_in = bits.sample_rate
    rate_dec = rate_in
    if profile.decimation is not None:
        rate_dec = rate_in * Fraction(
            profile.decimation.up_factor, profile.decimation.down_factor
        )

    q = profile.quantizer
    if q.kind == "vq":
        sec = bits.section(SEC_VQ_IDX)
        idx = _decode_index_section(
            sec, _vq_table(codebooks) if profile.entropy_coding else None,
            q.l_vq * q.q_vq, profile.entropy_coding,
        )
        vecs = vq_core.dequantize_batch(codebooks, idx)
        batch = VectorBatch(
            q.l_vq, vecs, profile.vector_method,
            permutation_seed=bits.perm_seed, original_count=2 * bits.m_dec,
        )
        x = devectorize(batch, rate_dec)
    elif q.kind == "msvq":
        t1, t2 = _msvq_tables(codebooks) if profile.entropy_coding else (None, None)
        i1 = _decode_index_section(
            bits.section(SEC_MSVQ_I1), t1, q.q1 * q.l, profile.entropy_coding
        )
        i2 = _decode_index_section(
            bits.section(SEC_MSVQ_I2), t2, q.q2 * q.l, profile.entropy_coding
        )
        vecs = dequantize_msvq(codebooks, i1, i2)
        batch = VectorBatch(
            q.l, vecs, profile.vector_method,
            permutation_seed=bits.perm_seed, original_count=2 * bits.m_dec,
        )
        x = devectorize(batch, rate_dec)
    elif q.kind == "upmgq":
        cfg = q.config(profile.q0)
        sign_sec = bits.section(SEC_SIGN)
        n_comp = sign_sec.item_count
        if n_comp != 2 * bits.m_dec:
            raise MalformedBitstreamError("sign section count mismatch")
        signs = unpack_bit_array(sign_sec.payload, sign_sec.bit_length)
        g2 = _decode_index_section(
            bits.section(SEC_G2), codebooks.huffman_high,
            q.q_high * q.l, profile.entropy_coding,
        )
        g3 = _decode_g3(bits.section(SEC_G3), q)
        ind = UpmgqIndices(signs.astype(np.uint8), g2, g3, n_comp)
        x = dequantize_upmgq(codebooks, cfg, ind, rate_dec)
    else:
        sec = bits.section(SEC_RAW)
        if sec.item_count != 2 * bits.m_dec:
            raise MalformedBitstreamError("raw section count mismatch")
        half = 1 << (profile.q0 - 1)
        codes = unpack_fixed(sec.payload, profile.q0, sec.item_count)
        comps = (codes.astype(np.float64) - half) / bits.raw_scale
        m = bits.m_dec
        x = IQStream(comps[:m] + 1j * comps[m:], rate_dec)

    if len(x) != bits.m_dec:
        raise MalformedBitstreamError("reconstructed sample count mismatch")

    if profile.block_scaling is not None:
        bs = profile.block_scaling
        sec = bits.section(SEC_SCALE)
        factors = frontend.ScaleFactors(
            bs.n_bs, bs.q_bs, unpack_fixed(sec.payload, bs.q_bs, sec.item_count)
        )
        x = frontend.block_unscale(x, factors, profile.quantizer.scale_bits)

    m_after_cp = bits.m_in
    if profile.cp_removal:
        step = profile.l_sym + profile.l_cp
        m_after_cp = bits.m_in // step * profile.l_sym
    if profile.decimation is not None:
        x = frontend.resample(x, profile.decimation, frontend.INTERPOLATE)
        if len(x) < m_after_cp:
            raise MalformedBitstreamError("interpolated stream too short")
        x = x.with_samples(x.samples[:m_after_cp], rate_in)

    if profile.cp_removal:
        x = frontend.reinsert_cp(x, profile.l_sym, profile.l_cp)
    if len(x) != bits.m_in:
        raise MalformedBitstreamError("decompressed length mismatch")
    return x


def _decode_g3(sec: Section, q: UpmgqSpec) -> np.ndarray:
    if q.g3_entropy:
        table, consumed = ec.parse_table(sec.payload)
        return ec.decode(table, sec.payload[consumed:], sec.item_count)
    if q.q_low == 0:
        return np.zeros(sec.item_count, dtype=np.int64)
    return unpack_fixed(sec.payload, q.q_low, sec.item_count).astype(np.int64)


def strip_cp(stream: IQStream, l_sym: int, l_cp: int) -> IQStream:
    """Helper for frequency-domain metrics: drop CPs so symbols align on
    fft_size boundaries."""
    return frontend.remove_cp(stream, l_sym, l_cp)


def frontend_transform(stream: IQStream, profile: CompressionProfile) -> IQStream:
    """Run the pre-quantizer stages only (CP removal, decimation, block
    scaling); this is the domain codebooks are trained in."""
    x = stream
    if profile.cp_removal:
        x = frontend.remove_cp(x, profile.l_sym, profile.l_cp)
    if profile.decimation is not None:
        x = frontend.resample(x, profile.decimation, frontend.DECIMATE)
    if profile.block_scaling is not None:
        bs = profile.block_scaling
        x, _ = frontend.block_scale(
            x, bs.n_bs, bs.q_bs, profile.quantizer.scale_bits
        )
    return x


def train_for_profile(
    stream: IQStream,
    profile: CompressionProfile,
    trainer: str = vq_core.MODIFIED,
    trials: int = 2,
    stop: vq_core.LloydStop = None,
    seed: int = 0,
):
    """Train the codebook artifact the profile's quantizer needs, on the
    profile's post-frontend domain."""
    from .msvq import train_msvq
    from .upmgq import train_upmgq

    x = frontend_transform(stream, profile)
    q = profile.quantizer
    if q.kind == "vq":
        batch = vectorize(x, profile.vector_method, q.l_vq, profile.vector_seed)
        train = (
            vq_core.train_classical
            if trainer == vq_core.CLASSICAL
            else vq_core.train_modified
        )
        return train(batch.vectors, q.q_vq, trials, stop, seed)
    if q.kind == "msvq":
        batch = vectorize(x, profile.vector_method, q.l, profile.vector_seed)
        return train_msvq(batch.vectors, q.q1, q.q2, trainer, stop, seed, trials)
    if q.kind == "upmgq":
        return train_upmgq(x, q.config(profile.q0), trainer, stop, seed, trials)
    raise ContractViolationError(f"quantizer {q.kind!r} needs no training")


def evaluate_chain(
    stream: IQStream,
    profile: CompressionProfile,
    codebooks=None,
    counter: SearchCounter = None,
    corpus_meta: dict = None,
) -> EvalReport:
    """Compress + decompress one stream and measure EVM/CR (and SO/CS when a
    counter is supplied)."""
    bits = compress(stream, profile, codebooks, counter)
    out = decompress(bits, profile, codebooks)
    stats = bits.stats
    td = evm_td(stream, out)
    step = profile.l_sym + profile.l_cp
    if len(stream) % step == 0 and len(stream) > 0:
        fd_in = strip_cp(stream, profile.l_sym, profile.l_cp)
        fd_out = strip_cp(out, profile.l_sym, profile.l_cp)
        fd = evm_fd(fd_in, fd_out, profile.utilized_band(), profile.l_sym)
    else:
        fd = float("nan")
    so = cs = 0
    if counter is not None:
        from .metrics import complexity_counters

        so, cs = complexity_counters(stats)
    bs = profile.block_scaling
    literal = theorem_cr(
        stats.cr_cpr, stats.cr_dec, stats.quantizer_gain, 1.0,
        bs.q_bs if bs else 0, bs.n_bs if bs else 1, profile.q0,
    )
    return EvalReport(
        evm_td_pct=td,
        evm_fd_pct=fd,
        cr_formula=compression_ratio(profile, stats),
        cr_measured=stats.cr_measured,
        cr_formula_literal=literal,
        cr_measured_no_side_info=2 * profile.q0 * stats.m_in
        / max(stats.quantizer_bits, 1),
        so_measured=so,
        cs_measured=cs,
        l_huff=stats.l_huff_emitted,
        l_high=stats.l_high,
        l_low=stats.l_low,
        profile_digest=f"{profile.digest():016x}",
        corpus=dict(corpus_meta or stream.meta),
    )
