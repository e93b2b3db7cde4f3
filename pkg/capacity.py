"""
Uplink sum capacity, instantaneous and ergodic
C = log2(1 + ρ·Σ_k |h_k|²) with i.i.d. unit-power Rayleigh gains
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate, stats

from utils.error_handler import SimulationError

logger = logging.getLogger(__name__)

# Users drawn per sample regardless of K, so every K reads the same draws
SHARED_DRAW_USERS = 6


@dataclass(frozen=True)
class CapacityInput:
    snr_linear: float
    gains: Tuple[float, ...]

    def __post_init__(self):
        if self.snr_linear < 0:
            raise SimulationError(f"snr_linear must be ≥ 0, got {self.snr_linear}")
        if any(g < 0 for g in self.gains):
            raise SimulationError("channel gains must be ≥ 0")


def sum_capacity(capacity_input: CapacityInput) -> float:
    """Sum capacity in bits/s/Hz"""
    total_gain = float(np.sum(capacity_input.gains)) if capacity_input.gains else 0.0
    return float(np.log2(1.0 + capacity_input.snr_linear * total_gain))


def _gain_draws(n_users: int, n_draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    width = max(n_users, SHARED_DRAW_USERS)
    h = (rng.standard_normal((n_draws, width)) + 1j * rng.standard_normal((n_draws, width))) / np.sqrt(2.0)
    return np.abs(h[:, :n_users]) ** 2


def ergodic_sum_capacity(snr_db: float, n_users: int, n_draws: int, seed: int) -> Tuple[float, float]:
    """Monte Carlo mean of sum capacity and its standard error"""
    if n_draws < 1:
        raise SimulationError(f"n_draws must be ≥ 1, got {n_draws}")
    if n_users < 0:
        raise SimulationError(f"n_users must be ≥ 0, got {n_users}")
    if n_users == 0:
        return 0.0, 0.0

    rho = 10.0 ** (snr_db / 10.0)
    samples = np.log2(1.0 + rho * _gain_draws(n_users, n_draws, seed).sum(axis=1))
    stderr = float(samples.std(ddof=1) / np.sqrt(n_draws)) if n_draws > 1 else 0.0
    return float(samples.mean()), stderr


def quadrature_sum_capacity(snr_db: float, n_users: int) -> float:
    """E[log2(1 + ρG)] with G ~ Gamma(K, 1), by 1-D numerical integration"""
    if n_users == 0:
        return 0.0
    rho = 10.0 ** (snr_db / 10.0)
    gain = stats.gamma(a=n_users)
    value, _ = integrate.quad(lambda g: np.log2(1.0 + rho * g) * gain.pdf(g), 0.0, np.inf, limit=200)
    return float(value)


def capacity_table(snr_db_list: Sequence[float], users_list: Iterable[int], n_draws: int,
                   seed: int) -> pd.DataFrame:
    """Ergodic sum capacity over the (SNR, K) grid next to its quadrature value"""
    rows = []
    for snr_db in snr_db_list:
        for n_users in users_list:
            mean, stderr = ergodic_sum_capacity(snr_db, n_users, n_draws, seed)
            rows.append({
                "snr_db": float(snr_db),
                "K": int(n_users),
                "mean_capacity": mean,
                "stderr": stderr,
                "quadrature_capacity": quadrature_sum_capacity(snr_db, n_users),
            })
    logger.info(f"📊 Capacity table: {len(rows)} points, {n_draws} draws each")
    return pd.DataFrame(rows, columns=["snr_db", "K", "mean_capacity", "stderr", "quadrature_capacity"])
