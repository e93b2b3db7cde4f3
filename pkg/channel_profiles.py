"""
Channel and link constant tables
Tapped-delay-line profiles, puncturing patterns and the modulation-and-coding catalogue
"""

import logging
from fractions import Fraction
from typing import Dict, List, Tuple

logger = logging.getLogger(__name__)

# 3GPP TR 38.901 Table 7.7.2-1, TDL-A: (normalized delay, power in dB)
TDLA_TAPS: Tuple[Tuple[float, float], ...] = (
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
    (2.1718, -12.4),
    (2.4942, -15.2),
    (2.5119, -10.8),
    (3.0582, -11.3),
    (4.0810, -12.7),
    (4.4579, -16.2),
    (4.5695, -18.3),
    (4.7966, -18.9),
    (5.0066, -16.6),
    (5.3043, -19.9),
    (9.6586, -29.7),
)

# Keep-masks over the interleaved mother stream [A0, B0, A1, B1, ...] of the (133, 171) code.
# Rates below 1/2 keep every mother bit and reach the target rate by circular repetition.
# 1/8 sits at the low end of the NR QPSK table (code rate 120/1024).
PUNCTURING_PATTERNS: Dict[str, Tuple[int, ...]] = {
    '1/8': (1, 1),
    '1/6': (1, 1),
    '1/4': (1, 1),
    '1/3': (1, 1),
    '1/2': (1, 1),
    '2/3': (1, 1, 1, 0),
    '3/4': (1, 1, 1, 0, 0, 1),
}

SUPPORTED_MODULATIONS: Tuple[int, ...] = (4, 16, 64)

DEFAULT_MCS_SET = "4:1/8,4:1/6,4:1/4,4:1/3,4:1/2,4:2/3,4:3/4,16:1/2,16:3/4"


class ProfileCatalog:
    """Lookup layer over the constant tables"""

    def __init__(self):
        self.delay_profiles = {
            'TDL-A': TDLA_TAPS,
        }
        self.puncturing_patterns = PUNCTURING_PATTERNS

    def normalized_taps(self, name: str = 'TDL-A') -> List[Tuple[float, float]]:
        """Return (normalized delay, power dB) pairs of a named profile"""
        if name not in self.delay_profiles:
            raise KeyError(f"Unknown delay profile '{name}'")
        return list(self.delay_profiles[name])

    def supported_rates(self) -> List[str]:
        return list(self.puncturing_patterns.keys())

    def puncturing_pattern(self, code_rate: str) -> Tuple[int, ...]:
        if code_rate not in self.puncturing_patterns:
            raise KeyError(f"Unsupported code rate '{code_rate}'")
        return self.puncturing_patterns[code_rate]

    @staticmethod
    def rate_value(code_rate: str) -> Fraction:
        return Fraction(code_rate)

    @staticmethod
    def parse_mcs_token(token: str) -> Tuple[int, str]:
        """Split an 'M:rate' token such as '16:3/4'"""
        order, _, rate = token.strip().partition(':')
        if not rate:
            raise ValueError(f"MCS token '{token}' must look like M:rate (e.g. 4:1/2)")
        return int(order), rate.strip()


# Global instance for easy import
profile_catalog = ProfileCatalog()
