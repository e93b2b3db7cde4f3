"""
Time-varying frequency-selective uplink channels
TDL-A power delay profile, sum-of-sinusoids Jakes fading per tap, per-RE frequency response and AWGN
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from channel_profiles import profile_catalog
from utils.error_handler import SimulationError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
SINUSOIDS_PER_TAP = 64


@dataclass(frozen=True)
class PowerDelayProfile:
    """Tap delays (seconds, ascending) and linear powers summing to 1"""
    delays_s: np.ndarray
    powers: np.ndarray

    @property
    def n_taps(self) -> int:
        return len(self.delays_s)

    @property
    def max_delay_s(self) -> float:
        return float(self.delays_s[-1])


@dataclass(frozen=True)
class FadingProcess:
    """Complex gain per (OFDM symbol, tap), sampled once per symbol"""
    gains: np.ndarray
    doppler_hz: float
    symbol_duration_s: float


@dataclass(frozen=True)
class ChannelRealization:
    """h[t, f, rx, user]: per-RE channel matrices of one slot"""
    h: np.ndarray

    @property
    def n_symbols(self) -> int:
        return self.h.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[1]

    @property
    def n_rx(self) -> int:
        return self.h.shape[2]

    @property
    def n_users(self) -> int:
        return self.h.shape[3]


def tdla_pdp(rms_delay_spread_s: float, profile: str = 'TDL-A') -> PowerDelayProfile:
    """Scale the normalized TDL-A table by the RMS delay spread and normalize tap powers"""
    if rms_delay_spread_s < 0:
        raise SimulationError(f"rms_delay_spread_s must be ≥ 0, got {rms_delay_spread_s}")

    taps = sorted(profile_catalog.normalized_taps(profile), key=lambda tap: tap[0])
    normalized_delays = np.array([delay for delay, _ in taps], dtype=float)
    powers = 10.0 ** (np.array([power_db for _, power_db in taps], dtype=float) / 10.0)
    return PowerDelayProfile(
        delays_s=normalized_delays * rms_delay_spread_s,
        powers=powers / powers.sum(),
    )


def doppler_from_speed(speed_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler frequency f_d = v·f_c / c"""
    return (speed_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT


def generate_fading(pdp: PowerDelayProfile, doppler_hz: float, n_symbols: int,
                    symbol_duration_s: float, seed: int,
                    n_sinusoids: int = SINUSOIDS_PER_TAP) -> FadingProcess:
    """Sum-of-sinusoids Rayleigh taps with random arrival angles and phases"""
    if doppler_hz < 0:
        raise SimulationError(f"doppler_hz must be ≥ 0, got {doppler_hz}")

    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(pdp.n_taps, n_sinusoids))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(pdp.n_taps, n_sinusoids))

    t = np.arange(n_symbols) * symbol_duration_s
    # (symbol, tap, sinusoid)
    arg = 2.0 * np.pi * doppler_hz * np.cos(angles)[None, :, :] * t[:, None, None] + phases[None, :, :]
    gains = np.exp(1j * arg).sum(axis=2) * np.sqrt(pdp.powers / n_sinusoids)[None, :]
    return FadingProcess(gains=gains, doppler_hz=doppler_hz, symbol_duration_s=symbol_duration_s)


def freq_response(fading: FadingProcess, pdp: PowerDelayProfile, n_subcarriers: int,
                  scs_hz: float) -> ChannelRealization:
    """H(t, f) = Σ_tap g_tap(t)·exp(−j2π f·scs·τ_tap) for one user and one receive antenna, h[t, f, 0, 0]"""
    if fading.gains.shape[1] != pdp.n_taps:
        raise SimulationError(
            f"fading has {fading.gains.shape[1]} taps but the profile has {pdp.n_taps}")
    f_sub = np.arange(n_subcarriers) * scs_hz
    steering = np.exp(-2j * np.pi * np.outer(pdp.delays_s, f_sub))
    return ChannelRealization(h=(fading.gains @ steering)[:, :, None, None])


def add_awgn(signal: np.ndarray, noise_var: float, seed: int) -> np.ndarray:
    """Add circularly symmetric complex Gaussian noise of variance noise_var per sample"""
    if noise_var < 0:
        raise SimulationError(f"noise variance must be ≥ 0, got {noise_var}")
    signal = np.asarray(signal, dtype=complex)
    if noise_var == 0:
        return signal.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
    return signal + np.sqrt(noise_var / 2.0) * noise


def generate_channel(pdp: PowerDelayProfile, doppler_hz: float, n_users: int, n_rx: int,
                     n_symbols: int, n_subcarriers: int, scs_hz: float, symbol_duration_s: float,
                     seed_for: Callable[[str], int]) -> ChannelRealization:
    """Independent fading per (user, rx antenna); seed_for maps a stream label to its seed"""
    h = np.empty((n_symbols, n_subcarriers, n_rx, n_users), dtype=complex)
    for k in range(n_users):
        for r in range(n_rx):
            fading = generate_fading(pdp, doppler_hz, n_symbols, symbol_duration_s,
                                     seed_for(f"fading/ue{k}/rx{r}"))
            h[:, :, r, k] = freq_response(fading, pdp, n_subcarriers, scs_hz).h[:, :, 0, 0]
    logger.debug(f"🔍 Channel generated: {n_users} users × {n_rx} rx, f_d = {doppler_hz:.2f} Hz")
    return ChannelRealization(h=h)
