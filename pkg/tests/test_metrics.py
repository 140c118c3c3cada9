import numpy as np
import pytest

import fvq
from fvq import metrics
from fvq.errors import ContractViolationError
from fvq.iqstream import IQStream
from fvq.vq_core import SearchCounter


def _stream(values):
    return IQStream(np.asarray(values, dtype=complex))


def _rand(n, seed=0):
    rng = np.random.default_rng(seed)
    return _stream(rng.standard_normal(n) + 1j * rng.standard_normal(n))


class TestEvmTd:
    def test_identical_is_zero(self):
        s = _rand(256)
        assert metrics.evm_td(s, s) == 0.0

    def test_one_percent_scale(self):
        s = _rand(256, seed=1)
        out = _stream(0.99 * s.samples)
        assert metrics.evm_td(s, out) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_error_minus_40db(self):
        rng = np.random.default_rng(2)
        n = 4096
        a = rng.standard_normal(n)
        s = _stream(a + 0j)
        err = 1j * a  # orthogonal to s under the real inner product
        e_ratio = 1e-4  # -40 dB in energy
        scale = np.sqrt(
            e_ratio * np.sum(np.abs(s.samples) ** 2) / np.sum(np.abs(err) ** 2)
        )
        out = _stream(s.samples + scale * err)
        assert metrics.evm_td(s, out) == pytest.approx(1.0, abs=0.01)

    def test_error_scale_covariance(self):
        s = _rand(512, seed=3)
        err = _rand(512, seed=4).samples
        e1 = metrics.evm_td(s, _stream(s.samples + err))
        e2 = metrics.evm_td(s, _stream(s.samples + 2 * err))
        assert e2 == pytest.approx(2 * e1, rel=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ContractViolationError):
            metrics.evm_td(_rand(8), _rand(9))

    def test_zero_energy_input(self):
        z = _stream(np.zeros(8))
        with pytest.raises(ContractViolationError):
            metrics.evm_td(z, _rand(8))


class TestEvmFd:
    def test_identical_is_zero(self):
        s = _rand(2048, seed=5)
        assert metrics.evm_fd(s, s, [1, 2, 3], 1024) == 0.0

    def test_error_outside_band_invisible(self):
        # place all error energy on bins outside B
        n_sym, fft = 4, 256
        rng = np.random.default_rng(6)
        band = np.arange(1, 65)
        grid = np.zeros((n_sym, fft), complex)
        grid[:, band] = rng.standard_normal((n_sym, 64)) + 1j * rng.standard_normal((n_sym, 64))
        sig = np.fft.ifft(grid, axis=1).ravel()
        err_grid = np.zeros((n_sym, fft), complex)
        err_grid[:, 100:150] = 7.0
        err = np.fft.ifft(err_grid, axis=1).ravel()
        assert metrics.evm_fd(
            _stream(sig), _stream(sig + err), band, fft
        ) == pytest.approx(0.0, abs=1e-9)

    def test_in_band_error_closed_form(self):
        n_sym, fft = 4, 256
        rng = np.random.default_rng(7)
        band = np.arange(1, 65)
        grid = np.zeros((n_sym, fft), complex)
        grid[:, band] = rng.standard_normal((n_sym, 64)) + 1j * rng.standard_normal((n_sym, 64))
        sig = np.fft.ifft(grid, axis=1).ravel()
        err_grid = np.zeros((n_sym, fft), complex)
        err_grid[:, band] = 0.02 * grid[:, band]
        err = np.fft.ifft(err_grid, axis=1).ravel()
        assert metrics.evm_fd(
            _stream(sig), _stream(sig + err), band, fft
        ) == pytest.approx(2.0, abs=0.01)

    def test_parseval_all_bins_equals_td(self):
        s = _rand(4 * 1024, seed=8)
        out = _stream(s.samples + 0.03 * _rand(4 * 1024, seed=9).samples)
        td = metrics.evm_td(s, out)
        fd = metrics.evm_fd(s, out, np.arange(1024), 1024)
        assert fd == pytest.approx(td, rel=1e-6)

    def test_empty_band_rejected(self):
        s = _rand(1024)
        with pytest.raises(ContractViolationError):
            metrics.evm_fd(s, s, [], 1024)

    def test_partial_symbol_rejected(self):
        s = _rand(1000)
        with pytest.raises(ContractViolationError):
            metrics.evm_fd(s, s, [1], 1024)


class TestComplexityCounters:
    def test_from_run_record(self):
        class Run:
            search_counters = {
                "a": SearchCounter(4096 * 10, 10),
                "b": SearchCounter(16 * 40, 40),
            }
            stored_codewords = 4112

        so, cs = metrics.complexity_counters(Run())
        assert (so, cs) == (4096 + 16, 4112)

    def test_non_integral_rejected(self):
        class Run:
            search_counters = {"a": SearchCounter(7, 2)}
            stored_codewords = 1

        with pytest.raises(ContractViolationError):
            metrics.complexity_counters(Run())


class TestMismatchMatrix:
    def test_relative_and_csv(self, tmp_path):
        m = metrics.MismatchMatrix(
            ["a", "b"],
            ["a", "b"],
            np.array([[2.0, 3.0], [2.5, 2.0]]),
            np.array([[2.0, 3.0], [2.5, 2.0]]),
        )
        rel = m.relative_pct()
        assert rel[0, 0] == 0.0
        assert rel[1, 0] == pytest.approx(25.0)
        assert rel[0, 1] == pytest.approx(50.0)
        path = tmp_path / "m.csv"
        m.write_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0].split(",")[0] == "train\\eval"
        assert len(rows) == 3
