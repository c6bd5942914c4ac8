#!/usr/bin/env python3
"""
Tests for the precoding module

This module tests the ZF, MMSE, MMSE-PAC and OPTL precoders and the
normalization modes, including the optimality of OPTL against a brute-force
search over beamformer directions.
"""

import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import minimize

from precoding_lab.errors import (
    DegenerateRow,
    DivergenceDetected,
    InfeasibleTargets,
    NonConvergence,
    RankDeficient,
)
from precoding_lab.linkmetrics import effective_channel, snir
from precoding_lab.precoding import (
    NormalizationMode,
    OptlParams,
    PacParams,
    beamformer_update,
    coupling_gains,
    downlink_power_alloc,
    mmse,
    mmse_pac,
    normalize,
    optl,
    power_control_update,
    row_powers,
    zero_forcing,
)
from tests.conftest import well_conditioned_channel


def random_complex(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


class TestZeroForcing:
    """Test cases for zero_forcing"""

    def test_identity(self):
        np.testing.assert_allclose(zero_forcing(np.eye(2)), np.eye(2), atol=1e-15)

    def test_inverts_square_channel(self, rng):
        H = well_conditioned_channel(rng, 6)
        W = zero_forcing(H)
        assert np.linalg.norm(H @ W - np.eye(6), 2) <= 1e-10
        np.testing.assert_allclose(W, np.linalg.inv(H), atol=1e-10)

    def test_wide_channel(self, rng):
        H = well_conditioned_channel(rng, 5, users=3)
        assert np.linalg.norm(H @ zero_forcing(H) - np.eye(3), 2) <= 1e-10

    def test_rank_deficient(self):
        with pytest.raises(RankDeficient):
            zero_forcing(np.array([[1.0, 1.0], [1.0, 1.0]]))


class TestMmse:
    """Test cases for mmse"""

    def test_identity_channel(self):
        np.testing.assert_allclose(mmse(np.eye(2), 1.0), 0.5 * np.eye(2), atol=1e-15)

    def test_zero_noise_is_zero_forcing(self, rng):
        H = well_conditioned_channel(rng, 4)
        assert np.linalg.norm(H @ mmse(H, 0.0) - np.eye(4), 2) <= 1e-10

    def test_push_through_identity(self, rng):
        """Test W = (H^H H + s I)^-1 H^H on 100 random instances"""
        for _ in range(100):
            H = random_complex(rng, (4, 4))
            sigma2 = rng.uniform(0.05, 2.0)
            expected = np.linalg.solve(H.conj().T @ H + sigma2 * np.eye(4), H.conj().T)
            np.testing.assert_allclose(mmse(H, sigma2), expected, rtol=0, atol=1e-10)

    def test_push_through_example(self, rng):
        H = random_complex(rng, (4, 4))
        expected = np.linalg.solve(H.conj().T @ H + 0.3 * np.eye(4), H.conj().T)
        np.testing.assert_allclose(mmse(H, 0.3), expected, atol=1e-10)

    def test_small_noise_limit(self, rng):
        H = well_conditioned_channel(rng, 4)
        np.testing.assert_allclose(mmse(H, 1e-12), zero_forcing(H), atol=1e-6)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError):
            mmse(np.eye(2), -1.0)


class TestMmsePac:
    """Test cases for mmse_pac"""

    def test_identity_quarter_budget(self):
        W, duals, diagnostics = mmse_pac(np.eye(2), PacParams(phi=0.25))
        np.testing.assert_allclose(W, 0.5 * np.eye(2), atol=1e-12)
        np.testing.assert_allclose(duals, [1.0, 1.0])
        assert diagnostics.converged
        assert diagnostics.iterations == 1

    def test_identity_unit_budget(self):
        """Test that the duals shrink toward zero and W approaches I"""
        W, duals, diagnostics = mmse_pac(np.eye(2), PacParams(phi=1.0, tolerance=1e-3, max_iterations=5000))
        np.testing.assert_allclose(row_powers(W), 1.0, atol=1e-3)
        np.testing.assert_allclose(W, np.eye(2), atol=1e-3)
        assert np.all(duals > 0)
        assert np.all(duals < 1e-3)
        assert diagnostics.converged

    def test_random_three_by_three(self, rng):
        H = well_conditioned_channel(rng, 3)
        W, _, _ = mmse_pac(H, PacParams(phi=1.0, tolerance=1e-6))
        np.testing.assert_allclose(np.sum(np.abs(W) ** 2, axis=1), 1.0, atol=1e-4)

    def test_power_equality_and_slackness(self, rng):
        """Test per-antenna power equality on 100 random 16x16 channels"""
        converged = 0
        for _ in range(100):
            H = well_conditioned_channel(rng, 16)
            try:
                W, duals, diagnostics = mmse_pac(H, PacParams(phi=1.0, tolerance=1e-6, max_iterations=1000))
            except NonConvergence:
                continue
            converged += 1
            powers = row_powers(W)
            np.testing.assert_allclose(powers, 1.0, atol=1e-4)
            assert np.max(duals * np.abs(powers - 1.0)) <= 1e-6
            assert diagnostics.slackness_residual <= 1e-6
        assert converged >= 99

    def test_matches_mmse_for_uniform_duals(self, rng):
        """Test that a scaled unitary channel converges to mmse with a scalar dual"""
        Q, _ = np.linalg.qr(random_complex(rng, (4, 4)))
        H = 0.5 * Q
        phi = float(row_powers(mmse(H, 0.1))[0])
        W, duals, _ = mmse_pac(H, PacParams(phi=phi, tolerance=1e-10))
        np.testing.assert_allclose(duals, duals[0], rtol=1e-12)
        assert duals[0] == pytest.approx(0.1, rel=1e-8)
        np.testing.assert_allclose(W, mmse(H, duals[0]), atol=1e-10)

    def test_non_convergence(self):
        with pytest.raises(NonConvergence) as excinfo:
            mmse_pac(np.eye(2), PacParams(phi=1.0, tolerance=1e-9, max_iterations=3))
        assert excinfo.value.iterations == 3
        assert excinfo.value.mismatch > 1e-9

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PacParams(phi=0.0)
        with pytest.raises(ValueError):
            PacParams(phi=1.0, tolerance=1.5)
        with pytest.raises(ValueError):
            PacParams(phi=1.0, max_iterations=0)


class TestBeamformerUpdate:
    """Test cases for beamformer_update"""

    def test_single_user(self):
        U, mu = beamformer_update(np.array([[1.0, 0.0]]), [2.0])
        np.testing.assert_allclose(np.abs(U[:, 0]), [1.0, 0.0], atol=1e-15)
        assert mu[0] == pytest.approx(2.0)

    def test_orthogonal_channels(self):
        U, mu = beamformer_update(np.eye(2), [1.0, 1.0], [1.0, 1.0])
        np.testing.assert_allclose(np.abs(U), np.eye(2), atol=1e-15)
        np.testing.assert_allclose(mu, [1.0, 1.0])

    def test_unit_norm_columns(self, rng):
        H = random_complex(rng, (4, 5))
        U, _ = beamformer_update(H, rng.uniform(0.1, 3.0, 4))
        np.testing.assert_allclose(np.linalg.norm(U, axis=0), 1.0, atol=1e-12)

    @pytest.mark.parametrize("weighted", [False, True])
    def test_matches_generalized_eigenvalue(self, rng, weighted):
        """Test mu_i against a dense eigensolve of the pencil (p_i h_i h_i^H, B_i)"""
        H = np.array([[1.0, 0.6 + 0.2j], [0.5 - 0.3j, 0.9]])
        powers = np.array([1.3, 0.7])
        targets = np.array([2.0, 3.0])
        _, mu = beamformer_update(H, powers, targets, weight_interference_by_targets=weighted)

        weights = powers * targets if weighted else powers
        for i in range(2):
            h_i = H[i].conj()
            j = 1 - i
            h_j = H[j].conj()
            B = weights[j] * np.outer(h_j, h_j.conj()) + np.eye(2)
            A = powers[i] * np.outer(h_i, h_i.conj())
            largest = scipy.linalg.eigh(A, B, eigvals_only=True)[-1]
            assert mu[i] == pytest.approx(largest, rel=1e-9)


class TestPowerControl:
    """Test cases for power_control_update and downlink_power_alloc"""

    def test_fixed_point(self):
        np.testing.assert_allclose(power_control_update([1.0, 2.0], [3.0, 4.0], [3.0, 4.0]), [1.0, 2.0])

    def test_halves_when_ratio_doubled(self):
        np.testing.assert_allclose(power_control_update([1.0, 2.0], [6.0, 8.0], [3.0, 4.0]), [0.5, 1.0])

    def test_divergence(self):
        with pytest.raises(DivergenceDetected):
            power_control_update([1.0], [1e-10], [1.0])

    def test_alternation_converges(self, rng):
        H = well_conditioned_channel(rng, 3)
        targets = np.array([2.0, 1.5, 3.0])
        powers = np.ones(3)
        for _ in range(500):
            _, mu = beamformer_update(H, powers, targets)
            if np.max(np.abs(mu / targets - 1.0)) < 1e-8:
                break
            powers = power_control_update(powers, mu, targets)
        assert np.max(np.abs(mu / targets - 1.0)) < 1e-8

    def test_orthogonal_downlink(self):
        H = np.diag([2.0, 0.5])
        U = np.eye(2)
        powers = downlink_power_alloc(U, H, [4.0, 1.0], 0.5)
        np.testing.assert_allclose(powers, [4.0 * 0.5 / 4.0, 1.0 * 0.5 / 0.25])

    def test_single_user_downlink(self):
        powers = downlink_power_alloc(np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]]), [4.0], 0.5)
        assert powers[0] == pytest.approx(2.0)

    def test_infeasible_targets(self):
        H = np.array([[1.0, 0.9], [0.9, 1.0]])
        with pytest.raises(InfeasibleTargets):
            downlink_power_alloc(np.eye(2), H, [2.0, 2.0], 0.1)

    def test_coupling_gains(self):
        H = np.array([[1.0, 0.5j], [0.0, 2.0]])
        np.testing.assert_allclose(coupling_gains(H, np.eye(2)), [[1.0, 0.25], [0.0, 4.0]])


def downlink_sum_power(H, targets, sigma2, angles):
    """Minimum sum power for 2 users with beamformers u = [cos t, e^{jf} sin t].

    angles has shape (..., 4) = (t1, f1, t2, f2); infeasible points return inf.
    """
    t1, f1, t2, f2 = (angles[..., i] for i in range(4))
    u1 = np.stack([np.cos(t1), np.exp(1j * f1) * np.sin(t1)], axis=-1)
    u2 = np.stack([np.cos(t2), np.exp(1j * f2) * np.sin(t2)], axis=-1)
    a = lambda i, u: np.abs(u @ H[i]) ** 2  # |h_i^H u|^2
    a11, a12, a21, a22 = a(0, u1), a(0, u2), a(1, u1), a(1, u2)
    g1, g2 = targets
    q1, q2 = g1 * sigma2, g2 * sigma2
    det = a11 * a22 - g1 * g2 * a12 * a21
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = (q1 * a22 + g1 * a12 * q2) / det
        p2 = (a11 * q2 + g2 * a21 * q1) / det
    total = p1 + p2
    feasible = (det > 1e-12) & (p1 > 0) & (p2 > 0)
    return np.where(feasible, total, np.inf)


def oracle_min_sum_power(H, targets, sigma2):
    """Grid over beamformer directions, then local refinement of the best points"""
    theta = np.linspace(0.0, np.pi / 2, 16)
    phase = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
    t, f = np.meshgrid(theta, phase, indexing="ij")
    single = np.stack([t.ravel(), f.ravel()], axis=-1)
    grid = np.concatenate(
        [np.repeat(single, len(single), axis=0), np.tile(single, (len(single), 1))], axis=1
    )
    values = downlink_sum_power(H, targets, sigma2, grid)
    best = np.inf
    for index in np.argsort(values)[:3]:
        if not np.isfinite(values[index]):
            continue
        objective = lambda x: min(float(downlink_sum_power(H, targets, sigma2, x)), 1e12)
        result = minimize(objective, grid[index], method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000, "maxfev": 20000})
        best = min(best, result.fun, values[index])
    return best


class TestOptl:
    """Test cases for optl"""

    def test_identity(self):
        W, state = optl(np.eye(2), 1.0, OptlParams(targets=(1.0, 1.0)))
        np.testing.assert_allclose(np.abs(W), np.eye(2), atol=1e-12)
        np.testing.assert_allclose(snir(effective_channel(np.eye(2), W), 1.0), [1.0, 1.0])
        assert state.converged

    def test_single_user(self):
        H = np.array([[1.0, 0.0]])
        W, state = optl(H, 0.5, OptlParams(targets=(4.0,)))
        np.testing.assert_allclose(np.abs(W[:, 0]), [np.sqrt(2.0), 0.0], atol=1e-12)
        assert snir(effective_channel(H, W), 0.5)[0] == pytest.approx(4.0)

    def test_state_invariants(self, rng):
        H = well_conditioned_channel(rng, 4)
        _, state = optl(H, 0.1, OptlParams(targets=(2.0, 2.0, 2.0, 2.0)))
        np.testing.assert_allclose(np.linalg.norm(state.beamformers, axis=0), 1.0, atol=1e-12)
        assert np.all(state.uplink_powers >= 0)
        assert state.iterations_used <= 500

    @pytest.mark.slow
    @pytest.mark.parametrize("size", [2, 4, 8, 16])
    def test_fixed_point_meets_targets(self, size):
        """Test achieved SNIR = target on 100 random channels per size"""
        rng = np.random.default_rng(size)
        for _ in range(100):
            H = well_conditioned_channel(rng, size)
            targets = rng.uniform(1.0, 4.0, size)
            sigma2 = rng.uniform(0.01, 0.5)
            W, state = optl(H, sigma2, OptlParams(targets=tuple(targets)))
            achieved = snir(effective_channel(H, W), sigma2)
            np.testing.assert_allclose(achieved, targets, rtol=1e-6)
            assert state.iterations_used <= 500

    def test_minimum_sum_power_example(self):
        """Test OPTL against the brute-force oracle on the reference 2x2 instance"""
        H = np.array([[1.0, 0.5], [0.5, 1.0]])
        targets = (3.0, 3.0)
        _, state = optl(H, 0.1, OptlParams(targets=targets))
        total = float(np.sum(state.downlink_powers))
        oracle = oracle_min_sum_power(H, np.array(targets), 0.1)
        assert total <= oracle * (1 + 1e-3)
        assert total >= oracle * (1 - 1e-3)

    @pytest.mark.slow
    def test_minimum_sum_power_random(self):
        """Test OPTL optimality on 20 random 2x2 instances"""
        rng = np.random.default_rng(99)
        for _ in range(20):
            H = well_conditioned_channel(rng, 2, spread=0.6)
            targets = rng.uniform(1.0, 4.0, 2)
            sigma2 = rng.uniform(0.05, 0.5)
            _, state = optl(H, sigma2, OptlParams(targets=tuple(targets)))
            total = float(np.sum(state.downlink_powers))
            assert total <= oracle_min_sum_power(H, targets, sigma2) * (1 + 1e-3)

    def test_rank_deficient_channel_diverges(self):
        with pytest.raises(DivergenceDetected):
            optl(np.array([[1.0, 1.0], [1.0, 1.0]]), 0.1, OptlParams(targets=(1.0, 1.0), power_cap=100.0))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            OptlParams(targets=(1.0, 0.0))
        with pytest.raises(ValueError):
            OptlParams(targets=(1.0,), max_iterations=0)


class TestNormalize:
    """Test cases for normalize"""

    def test_unit_row_example(self):
        np.testing.assert_allclose(normalize(np.array([[3.0, 4.0]]), "UnitRow"), [[0.6, 0.8]])

    def test_mpc_example(self):
        W = np.array([[2.0, 0.0], [0.6, 0.8]])
        np.testing.assert_allclose(normalize(W, NormalizationMode.MPC, phi=1.0), W / 2)

    def test_zero_row(self):
        with pytest.raises(DegenerateRow):
            normalize(np.array([[1.0, 0.0], [0.0, 0.0]]), "UnitRow")

    @pytest.mark.parametrize("mode,phi,expected", [
        ("UnitRow", 2.0, 1.0),
        ("PAC", 2.0, 2.0),
        ("PAR", 0.5, 0.5),
    ])
    def test_row_norms(self, rng, mode, phi, expected):
        W = random_complex(rng, (6, 4))
        normalized = normalize(W, mode, phi=phi)
        np.testing.assert_allclose(row_powers(normalized), expected, atol=1e-12)

    def test_mpc_contract(self, rng):
        W = random_complex(rng, (6, 4))
        normalized = normalize(W, "MPC", phi=2.0)
        assert np.max(row_powers(normalized)) == pytest.approx(2.0, rel=1e-12)
        ratio = normalized / W
        np.testing.assert_allclose(ratio, ratio[0, 0], rtol=1e-12)

    def test_mpc_keeps_strongest_stream(self, rng):
        H = random_complex(rng, (4, 4))
        W = mmse(H, 0.2)
        before = np.argmax(np.abs(H @ W), axis=1)
        after = np.argmax(np.abs(H @ normalize(W, "MPC", phi=1.0)), axis=1)
        np.testing.assert_array_equal(before, after)

    @pytest.mark.parametrize("mode", list(NormalizationMode))
    def test_idempotent(self, rng, mode):
        W = random_complex(rng, (5, 3))
        once = normalize(W, mode, phi=0.7)
        np.testing.assert_allclose(normalize(once, mode, phi=0.7), once, atol=1e-12)
