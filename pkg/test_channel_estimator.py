import numpy as np
import pytest

from channel_estimator import (NOISE_FLOOR, estimate_channel, estimate_noise_var, frequency_weights,
                               ls_estimate, smooth_pilots, smoother_matrix, time_weights)
from channel_model import doppler_from_speed, generate_channel, tdla_pdp
from config import PilotConfig, derive_seed
from transmitter import build_grid, map_qam
from utils.error_handler import SimulationError

N_SYMBOLS, N_SUBCARRIERS = 14, 48
PILOTS_K2 = PilotConfig(pilot_symbol_indices=(2, 11), comb_size=2)


def _grids(rng, n_users=2, pilots=PILOTS_K2, n_subcarriers=N_SUBCARRIERS):
    n_data = (N_SYMBOLS - len(pilots.pilot_symbol_indices)) * n_subcarriers
    return [build_grid(map_qam(rng.integers(0, 2, 2 * n_data), 4), pilots, k, N_SYMBOLS, n_subcarriers)
            for k in range(n_users)]


def _receive(grids, h, noise_var, rng):
    """rx[t, f, r] = Σ_k h[t, f, r, k]·x_k[t, f] + noise"""
    cells = np.stack([g.cells for g in grids], axis=-1)
    rx = np.einsum('tfrk,tfk->tfr', h, cells)
    noise = rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape)
    return rx + np.sqrt(noise_var / 2) * noise


def _constant_channel(values, n_rx=1):
    values = np.asarray(values, dtype=complex)
    return np.broadcast_to(values, (N_SYMBOLS, N_SUBCARRIERS, n_rx, values.size)).copy()


class TestWeights:
    def test_time_weights(self):
        weights = time_weights(np.array([2, 11]), N_SYMBOLS)
        np.testing.assert_allclose(weights[2], [1.0, 0.0])
        np.testing.assert_allclose(weights[11], [0.0, 1.0])
        np.testing.assert_allclose(weights[0], [1 + 2 / 9, -2 / 9])
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)

    def test_single_pilot_symbol_holds_constant(self):
        np.testing.assert_array_equal(time_weights(np.array([3]), N_SYMBOLS), np.ones((N_SYMBOLS, 1)))

    def test_frequency_weights(self):
        weights = frequency_weights(np.arange(1, 48, 2), N_SUBCARRIERS)
        assert weights.shape == (48, 24)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)
        np.testing.assert_allclose(weights[0, 0], 1.0)
        np.testing.assert_allclose(weights[2, :2], [0.5, 0.5])

    def test_smoother_rows_average(self):
        smoother = smoother_matrix(5)
        np.testing.assert_allclose(smoother.sum(axis=1), 1.0)
        np.testing.assert_allclose(smoother[0, :2], 0.5)
        np.testing.assert_allclose(smoother[2, 1:4], 1 / 3)


class TestNoiselessRecovery:
    def test_constant_channel(self):
        rng = np.random.default_rng(1)
        grids = _grids(rng)
        h = _constant_channel([0.8 - 0.3j, -0.2 + 1.1j], n_rx=1)
        estimate = estimate_channel(_receive(grids, h, 0.0, rng), grids, true_h=h)
        np.testing.assert_allclose(estimate.h_hat, h, atol=1e-12)
        assert estimate.sigma2_hat == NOISE_FLOOR
        assert estimate.mse_true == pytest.approx(0.0, abs=1e-20)

    def test_linear_in_time(self):
        rng = np.random.default_rng(2)
        grids = _grids(rng)
        t = np.arange(N_SYMBOLS)[:, None, None, None]
        h = np.broadcast_to((0.5 + 0.2j) + (0.03 - 0.01j) * t * np.array([1.0, -2.0]),
                            (N_SYMBOLS, N_SUBCARRIERS, 2, 2)).copy()
        estimate = estimate_channel(_receive(grids, h, 0.0, rng), grids)
        np.testing.assert_allclose(estimate.h_hat, h, atol=1e-12)

    def test_zero_pilot_rejected(self):
        rng = np.random.default_rng(3)
        grids = _grids(rng)
        grids[1].cells[grids[1].own_pilot_mask] = 0.0
        with pytest.raises(SimulationError, match="zero pilot"):
            ls_estimate(np.zeros((N_SYMBOLS, N_SUBCARRIERS, 1), dtype=complex), grids)

    def test_single_pilot_cell_rejected(self):
        rng = np.random.default_rng(4)
        grids = _grids(rng, n_subcarriers=2)
        rx = np.ones((N_SYMBOLS, 2, 1), dtype=complex)
        raw = ls_estimate(rx, grids)
        with pytest.raises(SimulationError, match="≥ 2 pilot cells"):
            estimate_noise_var(raw, [smooth_pilots(r) for r in raw])


class TestNoisyEstimation:
    def test_ls_error_equals_noise_variance(self):
        rng = np.random.default_rng(5)
        noise_var = 0.1
        h = _constant_channel([0.8 - 0.3j, 0.4 + 0.4j])
        errors = []
        for _ in range(220):
            grids = _grids(rng)
            for raw, k in zip(ls_estimate(_receive(grids, h, noise_var, rng), grids), range(2)):
                errors.append(np.abs(raw.values - h[0, 0, 0, k]).ravel() ** 2)
        assert np.mean(np.concatenate(errors)) == pytest.approx(noise_var, rel=0.05)

    def test_noise_variance_estimate(self):
        rng = np.random.default_rng(6)
        noise_var = 0.1
        h = _constant_channel([0.8 - 0.3j, 0.4 + 0.4j])
        estimates = []
        for _ in range(100):
            grids = _grids(rng)
            estimates.append(estimate_channel(_receive(grids, h, noise_var, rng), grids).sigma2_hat)
        assert np.mean(estimates) == pytest.approx(noise_var, rel=0.1)

    def test_mse_proxy_tracks_measured_error(self):
        rng = np.random.default_rng(7)
        noise_var = 0.05
        h = _constant_channel([1.0, 0.6j])
        measured, proxy = [], []
        for _ in range(200):
            grids = _grids(rng)
            estimate = estimate_channel(_receive(grids, h, noise_var, rng), grids, true_h=h)
            measured.append(estimate.mse_true)
            proxy.append(estimate.mse.mean())
        assert np.mean(measured) < noise_var
        assert np.mean(proxy) == pytest.approx(np.mean(measured), rel=0.1)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(8)
        grids = _grids(rng)
        h = _constant_channel([0.8 - 0.3j, 0.4 + 0.4j])
        rx = _receive(grids, h, 0.2, rng)
        alpha = 1.5 - 2.0j
        base = estimate_channel(rx, grids)
        scaled = estimate_channel(alpha * rx, grids)
        assert scaled.sigma2_hat == pytest.approx(abs(alpha) ** 2 * base.sigma2_hat)
        np.testing.assert_allclose(scaled.h_hat, alpha * base.h_hat)

    def test_effective_noise_includes_estimation_error(self):
        rng = np.random.default_rng(9)
        grids = _grids(rng)
        estimate = estimate_channel(_receive(grids, _constant_channel([1.0, 1.0]), 0.1, rng), grids)
        assert estimate.sigma2_eff == pytest.approx(estimate.sigma2_hat + estimate.mse.sum())
        assert estimate.sigma2_eff > estimate.sigma2_hat

    def test_user_noise_var_counts_one_user(self):
        rng = np.random.default_rng(10)
        grids = _grids(rng)
        estimate = estimate_channel(_receive(grids, _constant_channel([1.0, 0.5j]), 0.1, rng), grids)
        for k in range(2):
            assert estimate.user_noise_var(k) == pytest.approx(estimate.sigma2_hat + estimate.mse[k])
            assert estimate.sigma2_hat < estimate.user_noise_var(k) < estimate.sigma2_eff
        with pytest.raises(SimulationError, match="outside"):
            estimate.user_noise_var(2)

    def test_single_user_pilots_are_smoothed(self):
        rng = np.random.default_rng(11)
        pilots = PilotConfig(pilot_symbol_indices=(2, 11), comb_size=1)
        h = _constant_channel([0.7 + 0.7j])
        errors = []
        for _ in range(50):
            grids = _grids(rng, n_users=1, pilots=pilots)
            errors.append(estimate_channel(_receive(grids, h, 0.1, rng), grids, true_h=h).mse_true)
        assert np.mean(errors) < 0.05


class TestOperatingConditions:
    SCS_HZ, SYMBOL_S = 30e3, 1e-3 / 28

    def _channel(self, speed_kmh, seed):
        return generate_channel(tdla_pdp(100e-9), doppler_from_speed(speed_kmh, 2e9), 2, 1, N_SYMBOLS,
                                N_SUBCARRIERS, self.SCS_HZ, self.SYMBOL_S,
                                lambda label: derive_seed(7, label, seed)).h

    def test_error_shrinks_with_snr(self):
        rng = np.random.default_rng(12)
        grids = _grids(rng)
        h = self._channel(5.0, 1)
        clean = _receive(grids, h, 0.0, rng)
        noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        errors = [estimate_channel(clean + np.sqrt(noise_var / 2) * noise, grids, true_h=h).mse_true
                  for noise_var in (1.0, 0.1, 0.01)]
        assert errors[0] > errors[1] > errors[2]

    @pytest.mark.slow
    def test_error_grows_with_speed(self):
        errors = {}
        for speed_kmh in (5.0, 500.0):
            rng = np.random.default_rng(13)
            trials = []
            for seed in range(6):
                grids = _grids(rng)
                h = self._channel(speed_kmh, seed)
                trials.append(estimate_channel(_receive(grids, h, 1e-3, rng), grids, true_h=h).mse_true)
            errors[speed_kmh] = np.mean(trials)
        assert errors[500.0] > 2 * errors[5.0]
