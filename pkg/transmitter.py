"""
Per-user transmit chain
Information bits -> (133, 171) convolutional code -> puncturing / rate matching -> interleaver
-> Gray QAM -> OFDM resource grid with comb pilots
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from channel_profiles import profile_catalog
from config import McsConfig, PilotConfig, derive_seed
from utils.error_handler import SimulationError

logger = logging.getLogger(__name__)

CONSTRAINT_LENGTH = 7
GENERATORS = (0o133, 0o171)
N_STATES = 1 << (CONSTRAINT_LENGTH - 1)

# Resource grid cell kinds
DATA = 0
PILOT = 1
NULL = 2


def _parity(value: int) -> int:
    return bin(value).count('1') & 1


def _build_trellis() -> Tuple[np.ndarray, np.ndarray]:
    """next_state[s, u] and output bits[s, u, 2]; state holds the last six inputs, newest in bit 5"""
    next_state = np.zeros((N_STATES, 2), dtype=np.int64)
    outputs = np.zeros((N_STATES, 2, 2), dtype=np.int64)
    for state in range(N_STATES):
        for u in range(2):
            register = (u << (CONSTRAINT_LENGTH - 1)) | state
            next_state[state, u] = register >> 1
            for g, generator in enumerate(GENERATORS):
                outputs[state, u, g] = _parity(generator & register)
    return next_state, outputs


NEXT_STATE, OUTPUT_BITS = _build_trellis()


@dataclass(frozen=True)
class CodeConfig:
    """Rate-1/2 mother code, zero-tail terminated, punctured or repeated to the target rate"""
    code_rate: str = '1/2'
    constraint_length: int = CONSTRAINT_LENGTH
    generators: Tuple[int, int] = GENERATORS

    @property
    def tail_bits(self) -> int:
        return self.constraint_length - 1

    @property
    def puncturing_pattern(self) -> Tuple[int, ...]:
        return profile_catalog.puncturing_pattern(self.code_rate)

    @property
    def rate(self) -> Fraction:
        return Fraction(self.code_rate)

    def mother_length(self, n_info: int) -> int:
        return 2 * (n_info + self.tail_bits)


def conv_encode(info_bits: np.ndarray, code: CodeConfig = CodeConfig()) -> np.ndarray:
    """Zero-tail mother code output [A0, B0, A1, B1, ...] of length 2·(k + 6)"""
    info_bits = np.asarray(info_bits, dtype=np.int64)
    if info_bits.size == 0:
        raise SimulationError("info_bits must be non-empty")
    padded = np.concatenate([info_bits, np.zeros(code.tail_bits, dtype=np.int64)])
    streams = []
    for generator in code.generators:
        # Tap at lag d is bit (K-1-d) of the generator
        taps = np.array([(generator >> (code.constraint_length - 1 - d)) & 1
                         for d in range(code.constraint_length)], dtype=np.int64)
        streams.append(np.convolve(padded, taps)[:padded.size] % 2)
    return np.stack(streams, axis=1).reshape(-1)


def puncture_mask(mother_length: int, code: CodeConfig) -> np.ndarray:
    return np.resize(np.array(code.puncturing_pattern, dtype=bool), mother_length)


def encode(info_bits: np.ndarray, code: CodeConfig = CodeConfig()) -> np.ndarray:
    """Mother code output with the rate's puncturing pattern applied"""
    mother = conv_encode(info_bits, code)
    return mother[puncture_mask(mother.size, code)]


def info_length(n_coded_bits: int, code_rate: str) -> int:
    """Information bits of a codeword filling n_coded_bits: ⌊N·r⌋ − tail"""
    n_info = int(Fraction(n_coded_bits) * Fraction(code_rate)) - (CONSTRAINT_LENGTH - 1)
    if n_info < 1:
        raise SimulationError(
            f"{n_coded_bits} coded bits at rate {code_rate} leave no room for information bits")
    return n_info


def rate_match_indices(n_info: int, n_coded_bits: int, code: CodeConfig) -> np.ndarray:
    """Mother-stream position of each transmitted bit (cyclic repetition or truncation of the punctured stream)"""
    kept = np.flatnonzero(puncture_mask(code.mother_length(n_info), code))
    return kept[np.arange(n_coded_bits) % kept.size]


@lru_cache(maxsize=64)
def interleaver_permutation(n: int) -> np.ndarray:
    """Positions ordered by the multiplicative hash (i·2654435761) mod 2^32"""
    keys = (np.arange(n, dtype=np.uint64) * np.uint64(2654435761)) & np.uint64(0xFFFFFFFF)
    permutation = np.argsort(keys, kind='stable')
    permutation.setflags(write=False)
    return permutation


def interleave(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    return values[interleaver_permutation(values.shape[0])]


def deinterleave(values: np.ndarray, expected_length: Optional[int] = None) -> np.ndarray:
    values = np.asarray(values)
    if expected_length is not None and values.shape[0] != expected_length:
        raise SimulationError(
            f"deinterleave length mismatch: got {values.shape[0]}, expected {expected_length}")
    out = np.empty_like(values)
    out[interleaver_permutation(values.shape[0])] = values
    return out


@dataclass(frozen=True)
class CodewordLayout:
    """Bit bookkeeping of one user's codeword in one slot"""
    n_info: int
    n_coded: int
    code: CodeConfig
    mother_index: np.ndarray = field(repr=False)

    @property
    def mother_length(self) -> int:
        return self.code.mother_length(self.n_info)

    def transmit_bits(self, info_bits: np.ndarray) -> np.ndarray:
        """Interleaved, rate-matched coded bits"""
        return interleave(conv_encode(info_bits, self.code)[self.mother_index])

    def recover(self, llr_rx: np.ndarray) -> np.ndarray:
        """Mother-stream LLRs: repeated copies summed, punctured positions 0"""
        llr = deinterleave(llr_rx, self.n_coded)
        return np.bincount(self.mother_index, weights=llr, minlength=self.mother_length)

    def spread(self, mother_posterior: np.ndarray, llr_rx: np.ndarray) -> np.ndarray:
        """Per transmitted copy: decoder posterior minus that copy's own channel LLR, interleaved"""
        llr = deinterleave(llr_rx, self.n_coded)
        return interleave(mother_posterior[self.mother_index] - llr)


def codeword_layout(n_data_cells: int, mcs: McsConfig) -> CodewordLayout:
    code = CodeConfig(code_rate=mcs.code_rate)
    n_coded = n_data_cells * mcs.bits_per_symbol
    n_info = info_length(n_coded, mcs.code_rate)
    return CodewordLayout(
        n_info=n_info,
        n_coded=n_coded,
        code=code,
        mother_index=rate_match_indices(n_info, n_coded, code),
    )


def _axis_levels(axis_bits: np.ndarray) -> np.ndarray:
    """Gray-coded PAM amplitude from (sign bit, magnitude bits...) as in 3GPP square QAM"""
    n_levels = axis_bits.shape[1]
    signs = 1 - 2 * axis_bits
    if n_levels == 1:
        return signs[:, 0].astype(float)
    inner = signs[:, n_levels - 1].astype(float)
    for idx in range(n_levels - 2, 0, -1):
        inner = signs[:, idx] * (2 ** (n_levels - 1 - idx) - inner)
    return signs[:, 0] * (2 ** (n_levels - 1) - inner)


@lru_cache(maxsize=8)
def constellation(modulation_order: int) -> Tuple[np.ndarray, np.ndarray]:
    """(points[M], bit_labels[M, log2 M]); label bits are MSB-first"""
    m = int(np.log2(modulation_order))
    if 2 ** m != modulation_order or m % 2:
        raise SimulationError(f"unsupported modulation order {modulation_order}")
    labels = np.arange(modulation_order)
    bits = (labels[:, None] >> np.arange(m - 1, -1, -1)[None, :]) & 1
    points = _axis_levels(bits[:, 0::2]) + 1j * _axis_levels(bits[:, 1::2])
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    points.setflags(write=False)
    bits.setflags(write=False)
    return points, bits


def map_qam(bits: np.ndarray, modulation_order: int) -> np.ndarray:
    """Gray square QAM with unit average energy"""
    bits = np.asarray(bits, dtype=np.int64)
    m = int(np.log2(modulation_order))
    if bits.size % m:
        raise SimulationError(f"{bits.size} bits cannot be split into {m}-bit symbols")
    points, _ = constellation(modulation_order)
    labels = bits.reshape(-1, m) @ (1 << np.arange(m - 1, -1, -1))
    return points[labels]


def pilot_sequence(user_id: int, n: int) -> np.ndarray:
    """Unit-magnitude QPSK pilots, fixed per user and independent of the master seed"""
    rng = np.random.default_rng(derive_seed(0, "pilot", user_id))
    return map_qam(rng.integers(0, 2, size=2 * n), 4)


def data_symbol_allocation(n_symbols: int, pilots: PilotConfig, n_users: int,
                           orthogonal: bool) -> Tuple[Tuple[int, ...], ...]:
    """Data OFDM symbols per user; orthogonal access assigns them round-robin"""
    data_symbols = [t for t in range(n_symbols) if t not in pilots.pilot_symbol_indices]
    if not orthogonal:
        return tuple(tuple(data_symbols) for _ in range(n_users))
    return tuple(tuple(t for i, t in enumerate(data_symbols) if i % n_users == k) for k in range(n_users))


@dataclass
class ResourceGrid:
    """One user's slot: cells[t, f], kind[t, f] in {DATA, PILOT, NULL}, pilot_owner[t, f] (−1 off pilots)"""
    user_id: int
    cells: np.ndarray
    kind: np.ndarray
    pilot_owner: np.ndarray

    @property
    def data_mask(self) -> np.ndarray:
        return self.kind == DATA

    @property
    def own_pilot_mask(self) -> np.ndarray:
        return self.pilot_owner == self.user_id

    def data_cell_count(self) -> int:
        return int(self.data_mask.sum())


def build_grid(symbols: np.ndarray, pilots: PilotConfig, user_id: int, n_symbols: int,
               n_subcarriers: int, data_symbols: Optional[Sequence[int]] = None) -> ResourceGrid:
    """Place comb pilots and time-major data cells for one user"""
    comb = pilots.comb_size
    kind = np.full((n_symbols, n_subcarriers), NULL, dtype=np.int8)
    pilot_owner = np.full((n_symbols, n_subcarriers), -1, dtype=np.int64)
    cells = np.zeros((n_symbols, n_subcarriers), dtype=complex)

    pilot_rows = list(pilots.pilot_symbol_indices)
    kind[pilot_rows, :] = PILOT
    pilot_owner[pilot_rows, :] = (np.arange(n_subcarriers) % comb)[None, :]

    if data_symbols is None:
        data_symbols = [t for t in range(n_symbols) if t not in pilot_rows]
    kind[list(data_symbols), :] = DATA

    own = pilot_owner == user_id
    cells[own] = pilot_sequence(user_id, int(own.sum()))

    data_mask = kind == DATA
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.size != int(data_mask.sum()):
        raise SimulationError(
            f"user {user_id} has {int(data_mask.sum())} data cells but {symbols.size} symbols were given")
    cells[data_mask] = symbols
    return ResourceGrid(user_id=user_id, cells=cells, kind=kind, pilot_owner=pilot_owner)
