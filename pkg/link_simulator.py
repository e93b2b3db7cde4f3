"""
Monte Carlo link simulation
One drop = one slot of K users through TDL-A channels to the receiver; points aggregate drops,
sweeps take the Cartesian product of scenario axes with genie MCS selection
"""

import logging
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from channel_estimator import estimate_channel
from channel_model import add_awgn, generate_channel, tdla_pdp
from config import McsConfig, SimConfig, ValidatedConfig, derive_seed, validate, with_overrides
from decoder import DecoderOutput, decode_codeword, idd_decode
from detectors import clip_llr, exhaustive_detect, mmse_sic, noma2_sic, single_user_demap_batch, sphere_detect_batch
from transmitter import build_grid, codeword_layout, data_symbol_allocation, map_qam
from utils.complexity import ComplexityCounters, ComplexityModel, complexity_tier
from utils.error_handler import ConfigError, SimulationError

logger = logging.getLogger(__name__)


@dataclass
class DropOutcome:
    """Per-user decode success and info-bit counts of one slot"""
    drop_index: int
    success: np.ndarray
    info_bits: np.ndarray
    counters: ComplexityCounters
    iteration_success: Optional[np.ndarray] = None
    channel: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class PointResult:
    snr_db: float
    mcs: McsConfig
    n_drops: int
    bler: np.ndarray
    goodput_se: float
    goodput_stderr: float
    counters: ComplexityCounters
    iteration_bler: Optional[np.ndarray] = None
    channels: List[Tuple[int, np.ndarray]] = field(default_factory=list, repr=False)


@dataclass
class MetricsRecord:
    """One results row"""
    snr_db: float
    n_users: int
    n_rx: int
    speed_kmh: float
    detector: str
    modulation: str
    code_rate: str
    n_drops: int
    bler: Tuple[float, ...]
    goodput_se: float
    overhead_fraction: float
    mults_per_re: float
    ratio_vs_sic: float
    truncation_rate: float
    master_seed: int
    goodput_stderr: float = 0.0
    nodes_per_re: float = 0.0
    wall_time_s: float = 0.0
    decoder_ops_per_re: float = 0.0
    iteration_bler: Optional[Tuple[Tuple[float, ...], ...]] = None


@dataclass(frozen=True)
class SweepAxes:
    """Axis values of a sweep; mcs None means genie selection over the scenario's mcs_set"""
    snr_db: Tuple[float, ...]
    n_users: Tuple[int, ...]
    speed_kmh: Tuple[float, ...]
    detector: Tuple[str, ...]
    mcs: Optional[Tuple[McsConfig, ...]] = None

    def __post_init__(self):
        for name in ('snr_db', 'n_users', 'speed_kmh', 'detector'):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"sweep axis '{name}' is empty")
        if self.mcs is not None and len(self.mcs) == 0:
            raise ConfigError("sweep axis 'mcs' is empty")


@dataclass
class SweepResult:
    records: List[MetricsRecord]
    channel_dumps: Dict[str, List[Tuple[int, np.ndarray]]] = field(default_factory=dict)


def transmit_amplitudes(config: SimConfig) -> np.ndarray:
    """Per-user amplitude; the NOMA pair splits a total power of 2"""
    if config.detector == 'noma2_sic':
        alpha = config.noma_power_split
        return np.sqrt(np.array([2.0 * alpha, 2.0 * (1.0 - alpha)]))
    return np.ones(config.n_users)


def _detect(config: SimConfig, Y: np.ndarray, Hs: np.ndarray, sigma2: float, mcs: McsConfig,
            counters: ComplexityCounters) -> np.ndarray:
    M = mcs.modulation_order
    if config.detector == 'sphere':
        return sphere_detect_batch(Y, Hs, sigma2, None, M, config.node_budget, counters).llr
    if config.detector == 'mmse_sic':
        return mmse_sic(Y, Hs, sigma2, M, counters)
    if config.detector == 'exhaustive':
        return exhaustive_detect(Y, Hs, sigma2, None, M, counters)
    if config.detector == 'noma2_sic':
        return noma2_sic(Y, Hs, sigma2, config.noma_power_split, M, counters)
    raise SimulationError(f"detector '{config.detector}' has no joint detection path")


def run_drop(validated: ValidatedConfig, drop_index: int, snr_db: Optional[float] = None,
             mcs: Optional[McsConfig] = None) -> DropOutcome:
    """Simulate one slot; channels, bits and noise come from streams labelled by drop index"""
    config = validated.config
    snr_db = config.snr_db_list[0] if snr_db is None else snr_db
    mcs = config.mcs if mcs is None else mcs
    noise_var = 10.0 ** (-snr_db / 10.0)
    n_users = config.n_users

    def seed_for(label: str) -> int:
        return derive_seed(config.master_seed, label, drop_index)

    channel = generate_channel(
        tdla_pdp(config.delay_spread_ns * 1e-9), validated.doppler_hz, n_users, config.n_rx,
        config.n_symbols, config.n_subcarriers, config.scs_hz, validated.symbol_duration_s, seed_for)

    orthogonal = config.detector == 'oma'
    allocation = data_symbol_allocation(config.n_symbols, config.pilot, n_users, orthogonal)
    grids, layouts, info = [], [], []
    for k in range(n_users):
        layout = codeword_layout(len(allocation[k]) * config.n_subcarriers, mcs)
        bits = np.random.default_rng(seed_for(f"bits/ue{k}")).integers(0, 2, size=layout.n_info)
        symbols = map_qam(layout.transmit_bits(bits), mcs.modulation_order)
        grids.append(build_grid(symbols, config.pilot, k, config.n_symbols, config.n_subcarriers, allocation[k]))
        layouts.append(layout)
        info.append(bits)

    amplitudes = transmit_amplitudes(config)
    tx = np.stack([grid.cells for grid in grids], axis=-1) * amplitudes
    rx = add_awgn(np.einsum('tfrk,tfk->tfr', channel.h, tx), noise_var, seed_for("noise"))

    effective_h = channel.h * amplitudes
    if config.csi == 'genie':
        H, sigma2 = effective_h, noise_var
        user_sigma2 = [noise_var] * n_users
    else:
        estimate = estimate_channel(rx, grids)
        H, sigma2 = estimate.h_hat, estimate.sigma2_eff
        user_sigma2 = [estimate.user_noise_var(k) for k in range(n_users)]

    counters = ComplexityCounters()
    iteration_success = None
    M = mcs.modulation_order
    if orthogonal:
        decoded: List[DecoderOutput] = []
        for k, grid in enumerate(grids):
            mask = grid.data_mask
            llr = single_user_demap_batch(rx[mask], H[mask][:, :, k], user_sigma2[k], M, counters)
            decoded.append(decode_codeword(clip_llr(llr, config.llr_clip).reshape(-1), layouts[k], config.llr_clip,
                                           counters))
    else:
        mask = grids[0].data_mask
        Y, Hs = rx[mask], H[mask]
        if config.detector == 'idd':
            result = idd_decode(Y, Hs, sigma2, layouts, M, config.idd_iterations, config.llr_clip,
                                config.node_budget, counters)
            decoded = result.final
            iteration_success = np.array([[np.array_equal(out.hard_bits, bits) for out, bits in zip(outputs, info)]
                                          for outputs in result.iterations])
        else:
            llr = clip_llr(_detect(config, Y, Hs, sigma2, mcs, counters), config.llr_clip)
            decoded = [decode_codeword(llr[:, k, :].reshape(-1), layouts[k], config.llr_clip, counters)
                       for k in range(n_users)]

    success = np.array([np.array_equal(out.hard_bits, bits) for out, bits in zip(decoded, info)])
    return DropOutcome(
        drop_index=drop_index,
        success=success,
        info_bits=np.array([layout.n_info for layout in layouts]),
        counters=counters,
        iteration_success=iteration_success,
        channel=channel.h if config.dump_channel else None,
    )


def goodput_se(outcomes: Sequence[DropOutcome], config: SimConfig) -> float:
    """Successfully decoded info bits per RE of the whole slot (pilot symbols included)"""
    if not outcomes:
        raise SimulationError("goodput needs at least one drop")
    delivered = sum(int(np.sum(o.info_bits[o.success])) for o in outcomes)
    return delivered / (len(outcomes) * config.n_subcarriers * config.n_symbols)


def _run_drop_task(task) -> DropOutcome:
    validated, drop_index, snr_db, mcs = task
    return run_drop(validated, drop_index, snr_db, mcs)


def run_point(validated: ValidatedConfig, snr_db: float, mcs: McsConfig,
              executor: Optional[Executor] = None) -> PointResult:
    """All drops of one operating point, merged in drop order"""
    config = validated.config
    tasks = [(validated, drop, snr_db, mcs) for drop in range(config.n_drops)]
    if executor is None:
        outcomes = [_run_drop_task(task) for task in tasks]
    else:
        chunksize = max(1, config.n_drops // 32)
        outcomes = list(executor.map(_run_drop_task, tasks, chunksize=chunksize))
    outcomes.sort(key=lambda o: o.drop_index)

    counters = ComplexityCounters()
    for outcome in outcomes:
        counters.merge(outcome.counters)

    slot_res = config.n_subcarriers * config.n_symbols
    per_drop_se = np.array([np.sum(o.info_bits[o.success]) / slot_res for o in outcomes])
    stderr = float(per_drop_se.std(ddof=1) / np.sqrt(len(outcomes))) if len(outcomes) > 1 else 0.0

    iteration_bler = None
    if outcomes[0].iteration_success is not None:
        iteration_bler = 1.0 - np.mean([o.iteration_success for o in outcomes], axis=0)

    return PointResult(
        snr_db=snr_db,
        mcs=mcs,
        n_drops=len(outcomes),
        bler=1.0 - np.mean([o.success for o in outcomes], axis=0),
        goodput_se=goodput_se(outcomes, config),
        goodput_stderr=stderr,
        counters=counters,
        iteration_bler=iteration_bler,
        channels=[(o.drop_index, o.channel) for o in outcomes if o.channel is not None],
    )


def to_record(validated: ValidatedConfig, point: PointResult) -> MetricsRecord:
    config = validated.config
    sic_reference = ComplexityModel.mmse_sic_cost(config.n_rx, config.n_users, point.mcs.modulation_order)
    mults_per_re = point.counters.mults_per_re
    return MetricsRecord(
        snr_db=point.snr_db,
        n_users=config.n_users,
        n_rx=config.n_rx,
        speed_kmh=config.speed_kmh,
        detector=config.detector,
        modulation=point.mcs.modulation_name,
        code_rate=point.mcs.code_rate,
        n_drops=point.n_drops,
        bler=tuple(float(b) for b in point.bler),
        goodput_se=point.goodput_se,
        overhead_fraction=validated.overhead_fraction,
        mults_per_re=mults_per_re,
        ratio_vs_sic=mults_per_re / sic_reference,
        truncation_rate=point.counters.truncation_rate,
        master_seed=config.master_seed,
        goodput_stderr=point.goodput_stderr,
        nodes_per_re=point.counters.nodes_per_re,
        wall_time_s=point.counters.wall_time_s,
        decoder_ops_per_re=point.counters.decoder_ops_per_re,
        iteration_bler=None if point.iteration_bler is None
        else tuple(tuple(float(b) for b in row) for row in point.iteration_bler),
    )


def run_link(validated: ValidatedConfig, snr_db: float, mcs_candidates: Sequence[McsConfig],
             executor: Optional[Executor] = None) -> Tuple[MetricsRecord, PointResult]:
    """One operating point; with several MCS the one with the highest goodput is kept (first on ties)"""
    best: Optional[PointResult] = None
    for mcs in mcs_candidates:
        point = run_point(validated, snr_db, mcs, executor)
        logger.debug(f"🔍 {validated.config.detector} {mcs.token} @ {snr_db} dB: SE = {point.goodput_se:.4f}")
        if best is None or point.goodput_se > best.goodput_se:
            best = point
    record = to_record(validated, best)
    tier = complexity_tier(record.ratio_vs_sic)
    logger.info(f"📊 K={record.n_users} {record.detector} @ {snr_db} dB, {record.speed_kmh} km/h: "
                f"SE = {record.goodput_se:.4f} ({record.modulation} {record.code_rate}), "
                f"{tier['emoji']} {record.ratio_vs_sic:.2f}× SIC")
    if record.truncation_rate > 0:
        logger.warning(f"⚠️ Sphere search truncated on {record.truncation_rate:.2%} of REs at {snr_db} dB")
    return record, best


def run_sweep(config: SimConfig, axes: SweepAxes, workers: int = 1) -> SweepResult:
    """Cartesian product of the axes; invalid combinations (e.g. noma2_sic with K ≠ 2) are reported and skipped"""
    result = SweepResult(records=[])
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for n_users in axes.n_users:
            for speed_kmh in axes.speed_kmh:
                for detector in axes.detector:
                    try:
                        scenario = with_overrides(config, n_users=n_users, speed_kmh=speed_kmh, detector=detector)
                    except ConfigError as e:
                        logger.warning(f"⚠️ Skipping K={n_users}, {speed_kmh} km/h, {detector}: {e.message}")
                        continue
                    validated = validate(scenario)
                    candidates = axes.mcs if axes.mcs is not None else scenario.mcs_set
                    for snr_db in axes.snr_db:
                        record, point = run_link(validated, snr_db, candidates, executor)
                        result.records.append(record)
                        dump_key = f"K{n_users}_v{speed_kmh:g}"
                        if point.channels and dump_key not in result.channel_dumps:
                            result.channel_dumps[dump_key] = point.channels
    finally:
        if executor is not None:
            executor.shutdown()
    logger.info(f"✅ Sweep finished: {len(result.records)} points")
    return result
