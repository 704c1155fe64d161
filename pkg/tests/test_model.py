"""System model: spreading, correlation, fading, shaped noise, decisions."""

import numpy as np
import pytest

from lpic.model import (
    ConvergenceReport,
    NotPositiveSemidefiniteError,
    SpreadingSet,
    SymbolBlock,
    bit_decision,
    convergence_check,
    correlation_matrix,
    equicorrelated_matrix,
    generate_spreading_set,
    matched_filter_output,
    noise_transform,
    sample_channel,
    sample_noise,
)


class TestSpreading:
    def test_generate_shapes_and_values(self, rng):
        s = generate_spreading_set(5, 31, rng)
        assert s.users == 5
        assert s.length == 31
        assert s.chips.dtype == np.int8
        assert set(np.unique(s.chips)) <= {-1, 1}

    def test_generate_is_deterministic(self):
        a = generate_spreading_set(4, 16, np.random.default_rng(9))
        b = generate_spreading_set(4, 16, np.random.default_rng(9))
        assert np.array_equal(a.chips, b.chips)

    def test_rejects_bad_sizes(self, rng):
        with pytest.raises(ValueError):
            generate_spreading_set(0, 8, rng)
        with pytest.raises(ValueError):
            generate_spreading_set(3, 0, rng)

    def test_spreading_set_rejects_non_binary(self):
        with pytest.raises(ValueError):
            SpreadingSet(np.array([[1, 0], [1, -1]]))
        with pytest.raises(ValueError):
            SpreadingSet(np.ones(4))

    def test_chip_statistics(self):
        # means ~0 and pairwise correlations ~1/P across many draws
        rng = np.random.default_rng(100)
        draws = 20000
        chips = rng.integers(0, 2, size=(draws, 8)) * 2 - 1
        mean = chips.mean()
        se = 1.0 / np.sqrt(draws * 8)
        assert abs(mean) < 5 * se


class TestCorrelation:
    def test_matches_direct_product(self, rng):
        s = generate_spreading_set(6, 32, rng)
        r = correlation_matrix(s)
        c = s.chips.astype(float)
        assert np.allclose(r, c @ c.T / 32, atol=0, rtol=0)

    def test_unit_diagonal_symmetric_psd(self, rng):
        for _ in range(20):
            r = correlation_matrix(generate_spreading_set(7, 16, rng))
            assert np.allclose(np.diag(r), 1.0)
            assert np.array_equal(r, r.T)
            assert np.linalg.eigvalsh(r)[0] > -1e-12

    def test_offdiagonal_variance(self):
        # E[rho_kj] = 0, Var[rho_kj] = 1/P for independent random sequences
        rng = np.random.default_rng(7)
        chips = 64
        vals = []
        for _ in range(4000):
            r = correlation_matrix(generate_spreading_set(2, chips, rng))
            vals.append(r[0, 1])
        vals = np.asarray(vals)
        se_mean = np.sqrt(1.0 / chips / len(vals))
        assert abs(vals.mean()) < 5 * se_mean
        assert abs(vals.var() - 1.0 / chips) < 5 * (1.0 / chips) * np.sqrt(2.0 / len(vals))

    def test_equicorrelated_values(self):
        r = equicorrelated_matrix(4, 0.3)
        assert np.allclose(np.diag(r), 1.0)
        off = r[~np.eye(4, dtype=bool)]
        assert np.allclose(off, 0.3)

    def test_equicorrelated_psd_range(self):
        equicorrelated_matrix(5, -1.0 / 4)  # boundary allowed
        with pytest.raises(ValueError):
            equicorrelated_matrix(5, -0.26)
        with pytest.raises(ValueError):
            equicorrelated_matrix(5, 1.01)
        assert equicorrelated_matrix(1, 0.9).shape == (1, 1)


class TestChannel:
    def test_shapes(self, rng):
        assert sample_channel(4, 2, rng).shape == (2, 4)
        assert sample_channel(4, 2, rng, size=10).shape == (10, 2, 4)

    def test_unit_power(self):
        rng = np.random.default_rng(3)
        h = sample_channel(3, 1, rng, size=200_000)
        power = np.abs(h) ** 2
        # |h|^2 is exponential(1): mean 1, var 1
        se = 1.0 / np.sqrt(power.size)
        assert abs(power.mean() - 1.0) < 5 * se
        re_var = np.var(h.real)
        assert abs(re_var - 0.5) < 5 * 0.5 * np.sqrt(2.0 / h.size)


class TestNoise:
    def test_transform_factorizes_positive_definite(self, rng):
        r = correlation_matrix(generate_spreading_set(5, 64, rng))
        ell = noise_transform(r)
        assert np.allclose(ell @ ell.T, r, atol=1e-12)

    def test_transform_handles_singular_psd(self):
        # equicorrelated at the lower PSD boundary has an exact zero eigenvalue
        r = equicorrelated_matrix(4, -1.0 / 3)
        ell = noise_transform(r)
        assert np.allclose(ell @ ell.T, r, atol=1e-10)

    def test_transform_rejects_indefinite(self):
        with pytest.raises(NotPositiveSemidefiniteError):
            noise_transform(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_sample_shapes_and_zero_variance(self, rng):
        r = equicorrelated_matrix(3, 0.4)
        assert sample_noise(r, 0.5, rng).shape == (3,)
        assert sample_noise(r, 0.5, rng, size=7).shape == (7, 3)
        assert np.all(sample_noise(r, 0.0, rng, size=4) == 0)
        with pytest.raises(ValueError):
            sample_noise(r, -1.0, rng)

    def test_covariance_matches_sigma2_r(self):
        rng = np.random.default_rng(17)
        r = equicorrelated_matrix(3, 0.5)
        sigma2 = 0.8
        n = sample_noise(r, sigma2, rng, size=200_000)
        emp = (n.conj().T @ n) / n.shape[0]
        se = sigma2 / np.sqrt(n.shape[0])
        assert np.max(np.abs(emp - sigma2 * r)) < 6 * se
        # pseudo-covariance E[n n^T] vanishes for circular noise
        pseudo = (n.T @ n) / n.shape[0]
        assert np.max(np.abs(pseudo)) < 6 * se


class TestMatchedFilter:
    def test_component_form(self, rng):
        users = 6
        r = correlation_matrix(generate_spreading_set(users, 32, rng))
        h = sample_channel(users, 1, rng)[0]
        bits = rng.integers(0, 2, users) * 2 - 1
        amps = rng.uniform(0.5, 2.0, users)
        block = SymbolBlock(bits=bits, amplitudes=amps)
        n = sample_noise(r, 0.3, rng)
        y = matched_filter_output(r, h, block, n)
        x = amps * bits * h
        for k in range(users):
            direct = sum(r[k, j] * x[j] for j in range(users) if j != k)
            assert abs(y[k] - (x[k] + direct + n[k])) < 1e-12

    def test_shape_validation(self, rng):
        r = equicorrelated_matrix(3, 0.2)
        block = SymbolBlock(bits=np.ones(3), amplitudes=np.ones(3))
        with pytest.raises(ValueError):
            matched_filter_output(r, np.ones(4, dtype=complex), block, np.zeros(3))

    def test_symbol_block_validation(self):
        with pytest.raises(ValueError):
            SymbolBlock(bits=np.array([1, 2]), amplitudes=np.ones(2))
        with pytest.raises(ValueError):
            SymbolBlock(bits=np.ones(2), amplitudes=np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            SymbolBlock(bits=np.ones(3), amplitudes=np.ones(2))

    def test_effective_symbols(self):
        block = SymbolBlock(bits=np.array([1, -1]), amplitudes=np.array([1.0, 10.0]))
        h = np.array([1 + 1j, 2.0])
        assert np.allclose(block.effective_symbols(h), [1 + 1j, -20.0])


class TestDecision:
    def test_signs(self):
        h = np.array([1.0, 1.0, 1j], dtype=complex)
        y = np.array([2.0, -0.5, 3j])  # conj(h) y = (2, -0.5, 3)
        assert np.array_equal(bit_decision(h, y), [1, -1, 1])

    def test_tie_goes_positive(self):
        h = np.array([1.0], dtype=complex)
        y = np.array([1j])  # Re(conj(h) y) = 0 exactly
        out = bit_decision(h, y)
        assert out[0] == 1
        assert out.dtype == np.int8


class TestConvergence:
    def test_equicorrelated_eigenvalue(self):
        # lambda_max of the equicorrelated R is 1 + (K-1) rho
        for users, rho in [(4, 0.2), (10, 0.05), (3, 0.49)]:
            rep = convergence_check(equicorrelated_matrix(users, rho))
            assert abs(rep.max_eigenvalue - (1 + (users - 1) * rho)) < 1e-12
            assert rep.converges == (1 + (users - 1) * rho < 2)

    def test_boundary_counts_as_divergent(self):
        rep = convergence_check(np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert rep.max_eigenvalue == pytest.approx(2.0, abs=1e-12)
        assert not rep.converges

    def test_identity_converges(self):
        rep = convergence_check(np.eye(6))
        assert rep == ConvergenceReport(1.0, True)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            convergence_check(np.array([[1.0, 0.2], [0.3, 1.0]]))
        with pytest.raises(ValueError):
            convergence_check(np.ones((2, 3)))
