import math

import numpy as np
import pytest

import fvq
from fvq import frontend, pipeline
from fvq.errors import (
    ContractViolationError,
    DigestMismatchError,
    MalformedBitstreamError,
)
from fvq.pipeline import (
    Bitstream,
    BlockScalingSpec,
    CompressionProfile,
    MsvqSpec,
    RawSpec,
    UpmgqSpec,
    VqSpec,
    compression_ratio,
    theorem_cr,
)
from tests.conftest import make_corpus


class TestProfile:
    def test_uplink_cp_removal_forbidden(self):
        with pytest.raises(ContractViolationError):
            CompressionProfile(link="uplink", cp_removal=True)

    def test_json_round_trip(self):
        prof = CompressionProfile(
            link="downlink", cp_removal=True,
            decimation=fvq.ResamplerSpec(5, 8),
            block_scaling=BlockScalingSpec(32, 8),
            quantizer=MsvqSpec(3, 3, 2),
        )
        back = CompressionProfile.from_dict(
            __import__("json").loads(prof.to_json())
        )
        assert back == prof
        assert back.digest() == prof.digest()

    def test_digest_changes_with_parameters(self):
        a = CompressionProfile(quantizer=VqSpec(2, 4))
        b = CompressionProfile(quantizer=VqSpec(2, 5))
        assert a.digest() != b.digest()

    def test_unknown_fields_rejected(self):
        with pytest.raises(ContractViolationError):
            CompressionProfile.from_dict({"nonsense": 1})


class TestTheoremFormula:
    def test_closed_form_identities(self):
        assert frontend.cp_removal_gain(1024, 128) == 1.125
        assert fvq.ResamplerSpec(5, 8).decimation_gain == pytest.approx(1.6)
        assert fvq.vq_core.vq_gain(15, 6) == 2.5

    def test_eq5_compositions(self):
        assert theorem_cr(1.125, 1.6, 2.5, 1.0) == pytest.approx(4.5)
        assert theorem_cr(1.125, 1.6, 2.5, 1.0, q_bs=8, n_bs=32, q0=15) == (
            pytest.approx(4.337, abs=0.001)
        )

    def test_disabled_stages_contribute_one(self):
        assert theorem_cr(1.0, 1.0, 1.0, 1.0) == 1.0


class TestRawPassthrough:
    def test_cr_exactly_one(self):
        prof = CompressionProfile(
            link="uplink", quantizer=RawSpec(), entropy_coding=False
        )
        s = make_corpus(4, seed=31)
        bits = pipeline.compress(s, prof)
        assert bits.stats.cr_measured == 1.0
        assert compression_ratio(prof, bits.stats) == pytest.approx(1.0)
        out = pipeline.decompress(bits, prof)
        assert fvq.evm_td(s, out) < 0.02

    def test_quantizer_bypass_limited_by_decimation(self):
        # raw quantizer: chain EVM equals the frontend-only round trip
        spec = fvq.ResamplerSpec(5, 8)
        prof = CompressionProfile(
            link="uplink", decimation=spec, quantizer=RawSpec(),
            entropy_coding=False,
        )
        s = make_corpus(8, seed=32)
        out = pipeline.decompress(pipeline.compress(s, prof), prof)
        dec = frontend.resample(s, spec, frontend.DECIMATE)
        rec = frontend.resample(dec, spec, frontend.INTERPOLATE)
        frontend_only = fvq.evm_td(
            s, rec.with_samples(rec.samples[: len(s)])
        )
        chain = fvq.evm_td(s, out)
        assert chain == pytest.approx(frontend_only, rel=0.02)


class TestRoundTrip:
    def test_vq_chain(self, uplink_corpus, small_uplink_profile,
                      small_vq_codebook):
        bits = pipeline.compress(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        )
        out = pipeline.decompress(bits, small_uplink_profile, small_vq_codebook)
        assert len(out) == len(uplink_corpus)
        assert out.sample_rate == uplink_corpus.sample_rate
        assert fvq.evm_td(uplink_corpus, out) < 40.0

    def test_serialization_round_trip(self, uplink_corpus,
                                      small_uplink_profile, small_vq_codebook):
        bits = pipeline.compress(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        )
        blob = bits.to_bytes()
        again = Bitstream.from_bytes(blob)
        assert again.to_bytes() == blob
        out = pipeline.decompress(blob, small_uplink_profile, small_vq_codebook)
        direct = pipeline.decompress(bits, small_uplink_profile,
                                     small_vq_codebook)
        np.testing.assert_array_equal(out.samples, direct.samples)

    def test_deterministic_bitstreams(self, uplink_corpus,
                                      small_uplink_profile, small_vq_codebook):
        a = pipeline.compress(uplink_corpus, small_uplink_profile,
                              small_vq_codebook).to_bytes()
        b = pipeline.compress(uplink_corpus, small_uplink_profile,
                              small_vq_codebook).to_bytes()
        assert a == b

    def test_downlink_chain_with_cp(self):
        prof = CompressionProfile(
            link="downlink", cp_removal=True,
            decimation=fvq.ResamplerSpec(5, 8),
            block_scaling=BlockScalingSpec(32, 8),
            quantizer=VqSpec(2, 4), entropy_coding=True,
        )
        s = make_corpus(12, seed=33, link="downlink_ofdm")
        cb = pipeline.train_for_profile(s, prof, trials=1, seed=2)
        out = pipeline.decompress(pipeline.compress(s, prof, cb), prof, cb)
        assert len(out) == len(s)

    def test_method3_round_trips_via_header_seed(self, uplink_corpus):
        prof = CompressionProfile(
            link="uplink",
            quantizer=VqSpec(2, 4), entropy_coding=True,
            vector_method="method3_random", vector_seed=99,
        )
        cb = pipeline.train_for_profile(uplink_corpus, prof, trials=1, seed=3)
        bits = pipeline.compress(uplink_corpus, prof, cb)
        assert bits.perm_seed == 99
        out = pipeline.decompress(bits, prof, cb)
        assert len(out) == len(uplink_corpus)

    def test_truncated_stream_rejected(self, uplink_corpus,
                                       small_uplink_profile, small_vq_codebook):
        blob = pipeline.compress(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        ).to_bytes()
        with pytest.raises(MalformedBitstreamError):
            pipeline.decompress(blob[:-10], small_uplink_profile,
                                small_vq_codebook)

    def test_digest_mismatch_rejected(self, uplink_corpus,
                                      small_uplink_profile, small_vq_codebook):
        blob = pipeline.compress(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        ).to_bytes()
        other = CompressionProfile(
            link="uplink",
            decimation=fvq.ResamplerSpec(5, 8),
            block_scaling=BlockScalingSpec(32, 8),
            quantizer=VqSpec(2, 4), entropy_coding=False,
        )
        with pytest.raises(DigestMismatchError):
            pipeline.decompress(blob, other, small_vq_codebook)

    def test_geometry_mismatch_rejected(self, uplink_corpus,
                                        small_uplink_profile):
        wrong = fvq.Codebook(2, 3, np.zeros((64, 2)))
        with pytest.raises(ContractViolationError):
            pipeline.compress(uplink_corpus, small_uplink_profile, wrong)


class TestAccounting:
    def test_formula_matches_measured_within_half_percent(
        self, uplink_corpus, small_uplink_profile, small_vq_codebook
    ):
        bits = pipeline.compress(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        )
        formula = compression_ratio(small_uplink_profile, bits.stats)
        assert abs(formula - bits.stats.cr_measured) < 0.005 * bits.stats.cr_measured

    def test_known_stage_product(self, uplink_corpus):
        # no EC, no scaling: CR = CPR * DEC * VQ exactly up to ceil effects
        prof = CompressionProfile(
            link="downlink", cp_removal=True,
            decimation=fvq.ResamplerSpec(5, 8),
            quantizer=VqSpec(2, 6), entropy_coding=False,
        )
        s = make_corpus(12, seed=34, link="downlink_ofdm")
        cb = pipeline.train_for_profile(s, prof, trials=1, seed=4)
        bits = pipeline.compress(s, prof, cb)
        assert compression_ratio(prof, bits.stats) == pytest.approx(
            1.125 * 1.6 * 2.5, rel=1e-3
        )
        assert bits.stats.cr_measured == pytest.approx(4.5, rel=1e-3)

    def test_upmgq_accounting(self, uplink_corpus):
        prof = CompressionProfile(
            link="uplink",
            decimation=fvq.ResamplerSpec(5, 8),
            block_scaling=BlockScalingSpec(32, 8),
            quantizer=UpmgqSpec(theta=0, q_high=3, l=2, q_low=3, q_scale=5),
            entropy_coding=True,
        )
        cb = pipeline.train_for_profile(uplink_corpus, prof, trials=1, seed=5)
        bits = pipeline.compress(uplink_corpus, prof, cb)
        formula = compression_ratio(prof, bits.stats)
        assert abs(formula - bits.stats.cr_measured) < 0.005 * bits.stats.cr_measured
        out = pipeline.decompress(bits, prof, cb)
        assert len(out) == len(uplink_corpus)

    def test_upmgq_g3_entropy_flag(self, uplink_corpus):
        prof = CompressionProfile(
            link="uplink",
            quantizer=UpmgqSpec(theta=0, q_high=3, l=2, q_low=3, q_scale=5,
                                g3_entropy=True),
            entropy_coding=True,
        )
        cb = pipeline.train_for_profile(uplink_corpus, prof, trials=1, seed=6)
        bits = pipeline.compress(uplink_corpus, prof, cb)
        out = pipeline.decompress(bits, prof, cb)
        assert len(out) == len(uplink_corpus)

    def test_msvq_chain_accounting(self, uplink_corpus):
        prof = CompressionProfile(
            link="uplink",
            decimation=fvq.ResamplerSpec(5, 8),
            block_scaling=BlockScalingSpec(32, 8),
            quantizer=MsvqSpec(2, 2, 2), entropy_coding=True,
        )
        cb = pipeline.train_for_profile(uplink_corpus, prof, trials=1, seed=7)
        counter = fvq.SearchCounter()
        rep = pipeline.evaluate_chain(uplink_corpus, prof, cb, counter)
        assert abs(rep.cr_formula - rep.cr_measured) < 0.005 * rep.cr_measured
        assert rep.so_measured == 2**4 + 2**4
        assert rep.cs_measured == 2**4 + 2**8

    def test_eval_report_json(self, uplink_corpus, small_uplink_profile,
                              small_vq_codebook):
        rep = pipeline.evaluate_chain(
            uplink_corpus, small_uplink_profile, small_vq_codebook
        )
        blob = rep.to_json()
        parsed = __import__("json").loads(blob)
        assert parsed["schema"] == "fvq-eval-1"
        assert parsed["evm_fd_pct"] == pytest.approx(rep.evm_fd_pct)
