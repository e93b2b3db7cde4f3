"""
Pilot-based channel estimation
LS on each user's comb pilots, three-cell smoothing along the comb, linear interpolation across
frequency then time, noise variance from the residual of the same smoother
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from transmitter import ResourceGrid
from utils.error_handler import SimulationError

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class PilotEstimates:
    """Raw LS estimates of one user: values[pilot symbol, comb cell, rx]"""
    user_id: int
    symbol_indices: np.ndarray
    subcarrier_indices: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SmoothedPilots:
    values: np.ndarray
    bias_factor: float


@dataclass
class ChannelEstimate:
    """h_hat[t, f, rx, user] with noise variance and per-user MSE proxy"""
    h_hat: np.ndarray
    sigma2_hat: float
    mse: np.ndarray
    mse_true: Optional[float] = None

    @property
    def sigma2_eff(self) -> float:
        """Noise variance for joint detection: noise plus estimation error of every superposed user"""
        return float(self.sigma2_hat + self.mse.sum())

    def user_noise_var(self, user: int) -> float:
        """Noise variance on REs only `user` occupies"""
        if not 0 <= user < self.mse.size:
            raise SimulationError(f"user {user} is outside the {self.mse.size} estimated users")
        return float(self.sigma2_hat + self.mse[user])


def ls_estimate(rx_grid: np.ndarray, grids: Sequence[ResourceGrid]) -> List[PilotEstimates]:
    """ĥ = y / p on every owned pilot cell; rx_grid is [t, f, rx]"""
    estimates = []
    for grid in grids:
        own = grid.own_pilot_mask
        symbol_indices = np.flatnonzero(own.any(axis=1))
        subcarrier_indices = np.flatnonzero(own[symbol_indices[0]])
        pilots = grid.cells[np.ix_(symbol_indices, subcarrier_indices)]
        if np.any(pilots == 0):
            raise SimulationError(f"user {grid.user_id} has a zero pilot symbol")
        y = rx_grid[np.ix_(symbol_indices, subcarrier_indices)]
        estimates.append(PilotEstimates(
            user_id=grid.user_id,
            symbol_indices=symbol_indices,
            subcarrier_indices=subcarrier_indices,
            values=y / pilots[:, :, None],
        ))
    return estimates


def frequency_weights(subcarrier_indices: np.ndarray, n_subcarriers: int) -> np.ndarray:
    """[f, comb cell] linear interpolation, nearest value beyond the comb edges"""
    grid = np.arange(n_subcarriers)
    eye = np.eye(len(subcarrier_indices))
    return np.stack([np.interp(grid, subcarrier_indices, eye[c]) for c in range(len(subcarrier_indices))],
                    axis=1)


def time_weights(symbol_indices: np.ndarray, n_symbols: int) -> np.ndarray:
    """[t, pilot symbol] linear interpolation / extrapolation; constant with one pilot symbol"""
    n_pilots = len(symbol_indices)
    weights = np.zeros((n_symbols, n_pilots))
    if n_pilots == 1:
        weights[:, 0] = 1.0
        return weights
    for t in range(n_symbols):
        segment = int(np.clip(np.searchsorted(symbol_indices, t, side='right') - 1, 0, n_pilots - 2))
        t0, t1 = symbol_indices[segment], symbol_indices[segment + 1]
        w = (t - t0) / (t1 - t0)
        weights[t, segment] = 1.0 - w
        weights[t, segment + 1] = w
    return weights


def interpolate(pilots: Sequence[PilotEstimates], n_symbols: int, n_subcarriers: int) -> np.ndarray:
    """Full-grid estimate h_hat[t, f, rx, user]"""
    n_rx = pilots[0].values.shape[2]
    h_hat = np.empty((n_symbols, n_subcarriers, n_rx, len(pilots)), dtype=complex)
    for k, estimate in enumerate(pilots):
        f_weights = frequency_weights(estimate.subcarrier_indices, n_subcarriers)
        t_weights = time_weights(estimate.symbol_indices, n_symbols)
        h_hat[:, :, :, k] = np.einsum('tp,pcr,fc->tfr', t_weights, estimate.values, f_weights)
    return h_hat


def interpolation_gain(estimate: PilotEstimates, n_symbols: int, n_subcarriers: int,
                       smoothed: bool = True) -> float:
    """Mean over grid cells of the squared weights on each raw pilot cell (noise-power gain)"""
    f_operator = frequency_weights(estimate.subcarrier_indices, n_subcarriers)
    if smoothed:
        f_operator = f_operator @ smoother_matrix(len(estimate.subcarrier_indices))
    f_energy = (f_operator ** 2).sum(axis=1).mean()
    t_energy = (time_weights(estimate.symbol_indices, n_symbols) ** 2).sum(axis=1).mean()
    return float(f_energy * t_energy)


def smoother_matrix(n: int) -> np.ndarray:
    """Three-cell moving average, two cells at the ends"""
    smoother = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - 1), min(n, i + 2)
        smoother[i, lo:hi] = 1.0 / (hi - lo)
    return smoother


def smooth_pilots(raw: PilotEstimates) -> SmoothedPilots:
    n = raw.values.shape[1]
    smoother = smoother_matrix(n)
    residual_operator = np.eye(n) - smoother
    return SmoothedPilots(
        values=np.einsum('ij,pjr->pir', smoother, raw.values),
        bias_factor=float((residual_operator ** 2).sum() / n),
    )


def estimate_noise_var(raw: Sequence[PilotEstimates], smoothed: Sequence[SmoothedPilots]) -> float:
    """Bias-corrected mean squared residual between raw and smoothed pilot estimates"""
    corrected = []
    for estimate, smooth in zip(raw, smoothed):
        if estimate.values.shape[1] < 2:
            raise SimulationError(f"user {estimate.user_id} needs ≥ 2 pilot cells per pilot symbol")
        residual_power = np.mean(np.abs(estimate.values - smooth.values) ** 2)
        corrected.append(residual_power / smooth.bias_factor)
    return max(float(np.mean(corrected)), NOISE_FLOOR)


def estimate_channel(rx_grid: np.ndarray, grids: Sequence[ResourceGrid],
                     true_h: Optional[np.ndarray] = None) -> ChannelEstimate:
    """LS + smoothing + interpolation + noise estimate; true_h[t, f, rx, user] enables mse_true"""
    n_symbols, n_subcarriers = rx_grid.shape[:2]
    raw = ls_estimate(rx_grid, grids)
    smoothed = [smooth_pilots(r) for r in raw]
    sigma2_hat = estimate_noise_var(raw, smoothed)
    # Same smoother for every comb spacing, so comb-1 and comb-K users get comparable noise averaging
    h_hat = interpolate([replace(r, values=s.values) for r, s in zip(raw, smoothed)], n_symbols, n_subcarriers)
    mse = np.array([sigma2_hat * interpolation_gain(r, n_symbols, n_subcarriers) for r in raw])

    mse_true = None
    if true_h is not None:
        mse_true = float(np.mean(np.abs(h_hat - true_h) ** 2))
    logger.debug(f"🔍 Channel estimate: σ̂² = {sigma2_hat:.4g}, mse proxy = {mse.sum():.4g}")
    return ChannelEstimate(h_hat=h_hat, sigma2_hat=sigma2_hat, mse=mse, mse_true=mse_true)
