import logging
from dataclasses import dataclass
from math import isqrt
from typing import Dict

from utils.error_handler import SimulationError

logger = logging.getLogger(__name__)

TRELLIS_STATES = 64


@dataclass
class ComplexityCounters:
    """Work tallies; detection in complex multiplies, decoding separately in trellis operations"""
    complex_mults: int = 0
    nodes_visited: int = 0
    detector_runs: int = 0
    detected_res: int = 0
    truncated_res: int = 0
    wall_time_s: float = 0.0
    decoder_ops: int = 0

    def merge(self, other: 'ComplexityCounters') -> 'ComplexityCounters':
        self.complex_mults += other.complex_mults
        self.nodes_visited += other.nodes_visited
        self.detector_runs += other.detector_runs
        self.detected_res += other.detected_res
        self.truncated_res += other.truncated_res
        self.wall_time_s += other.wall_time_s
        self.decoder_ops += other.decoder_ops
        return self

    @property
    def mults_per_re(self) -> float:
        return self.complex_mults / self.detected_res if self.detected_res else 0.0

    @property
    def nodes_per_re(self) -> float:
        return self.nodes_visited / self.detected_res if self.detected_res else 0.0

    @property
    def truncation_rate(self) -> float:
        return self.truncated_res / self.detected_res if self.detected_res else 0.0

    @property
    def decoder_ops_per_re(self) -> float:
        return self.decoder_ops / self.detected_res if self.detected_res else 0.0


class ComplexityModel:
    """
    Cost of each detector step for one RE, in complex multiplies.
    A complex-by-complex product, a real-by-complex product and a squared magnitude count as one,
    a real-by-real product as half. Divisions by a real pivot count as one.
    """

    @staticmethod
    def mmse_stage_cost(n_rx: int, n_remaining: int, modulation_order: int) -> int:
        cost_factors = {
            "gram": n_rx * n_rx * n_remaining,       # H·Hᴴ over remaining users
            "factor": n_rx ** 3,                     # N×N solve
            "filters": n_rx * n_rx * n_remaining,    # C⁻¹·H
            "sinr": n_rx * n_remaining,              # hᴴ·w per user
            "filter_output": n_rx,                   # wᴴ·y
            "demap": 2 * modulation_order,           # μ·s and |·|² per symbol
            "cancel": n_rx,                          # h·ŝ
        }
        return sum(cost_factors.values())

    @classmethod
    def mmse_sic_cost(cls, n_rx: int, n_users: int, modulation_order: int) -> int:
        return sum(cls.mmse_stage_cost(n_rx, n_remaining, modulation_order)
                   for n_remaining in range(n_users, 0, -1))

    @staticmethod
    def single_user_cost(n_rx: int, modulation_order: int) -> int:
        return 2 * n_rx * modulation_order

    @staticmethod
    def noma2_cost(n_rx: int, modulation_order: int) -> int:
        first_stage = 2 * n_rx * n_rx + n_rx ** 3 + 2 * n_rx + 2 * modulation_order + n_rx
        return first_stage + 2 * n_rx * modulation_order

    @staticmethod
    def exhaustive_cost(n_rx: int, n_users: int, modulation_order: int) -> int:
        return modulation_order ** n_users * (n_rx * n_users + n_rx)

    @staticmethod
    def sphere_preprocessing_cost(n_rx: int, n_users: int, modulation_order: int) -> int:
        """Noise-whitened regularized Gram, its Cholesky factor and the rotated observation"""
        k = n_users
        cost_factors = {
            "whiten": n_rx * k + n_rx,                                  # H/σ and y/σ
            "gram": n_rx * k * (k + 1) // 2,                            # upper triangle of HᴴH
            "cholesky": (k - 1) * k * (k + 1) // 6 + k * (k - 1) // 2,  # inner products and pivot divisions
            "matched_filter": n_rx * k,                                 # Hᴴ·y
            "forward_substitution": k * (k - 1) // 2 + k,               # Rᴴ·z = Hᴴ·y
            "level_scaling": k * isqrt(modulation_order) // 2,          # R_ll·a for each PAM level a
        }
        return sum(cost_factors.values())

    @staticmethod
    def sphere_expansion_cost(n_users: int, level: int, modulation_order: int) -> int:
        """Interference cancellation of the fixed symbols plus per-axis squared distances"""
        return (n_users - 1 - level) + isqrt(modulation_order)

    @staticmethod
    def bcjr_ops(n_steps: int) -> int:
        """Max-log trellis operations of one decode; the recursions add and compare, nothing multiplies"""
        branches = TRELLIS_STATES * 2 * n_steps
        cost_factors = {
            "branch_metrics": 2 * branches,
            "forward": 2 * branches,
            "backward": 2 * branches,
            "soft_output": 4 * branches,
        }
        return sum(cost_factors.values())


def complexity_ratio(counters_a: ComplexityCounters, counters_b: ComplexityCounters) -> float:
    """Ratio of complex multiplies per detected RE, a over b"""
    if counters_b.complex_mults == 0 or counters_b.detected_res == 0:
        raise SimulationError("reference counters are empty (no multiplies or no detected REs)")
    if counters_a.detected_res == 0:
        raise SimulationError("counters have no detected REs")
    return counters_a.mults_per_re / counters_b.mults_per_re


def complexity_tier(ratio_vs_sic: float) -> Dict[str, str]:
    """Bucket a complexity ratio against the SIC reference"""
    if ratio_vs_sic <= 1.0:
        return {"tier": "SIC", "emoji": "🟢", "description": "At or below SIC complexity"}
    if ratio_vs_sic < 3.0:
        return {"tier": "LOW", "emoji": "🟡", "description": "Below 3× SIC"}
    if ratio_vs_sic < 10.0:
        return {"tier": "MODERATE", "emoji": "🟠", "description": "Below 10× SIC"}
    return {"tier": "HIGH", "emoji": "🔴", "description": "10× SIC or more"}
