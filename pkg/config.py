import hashlib
import logging
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from channel_model import doppler_from_speed
from channel_profiles import DEFAULT_MCS_SET, SUPPORTED_MODULATIONS, profile_catalog
from utils.config_validator import ScenarioValidator
from utils.error_handler import ConfigError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

APP_VERSION = "0.4.0"
DETECTORS = ('oma', 'noma2_sic', 'mmse_sic', 'exhaustive', 'sphere', 'idd')
CSI_MODES = ('practical', 'genie')
MODULATION_NAMES = {4: 'QPSK', 16: '16QAM', 64: '64QAM'}


@dataclass
class Config:
    """Runtime settings from the environment (not part of a scenario)"""
    LOG_LEVEL: str = os.getenv('SIM_LOG_LEVEL', 'INFO')
    OUTPUT_DIR: str = os.getenv('SIM_OUTPUT_DIR', 'results')
    WORKERS: int = int(os.getenv('SIM_WORKERS', '0'))
    NODE_BUDGET: int = int(os.getenv('SIM_NODE_BUDGET', '0'))
    SELFTEST_TRIALS: int = int(os.getenv('SIM_SELFTEST_TRIALS', '1000'))

    def validate_config(self) -> bool:
        """Validate runtime settings"""
        if self.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"SIM_LOG_LEVEL must be a logging level name, got '{self.LOG_LEVEL}'")
        if self.WORKERS < 0:
            raise ValueError("SIM_WORKERS must be ≥ 0 (0 = available parallelism)")
        if self.NODE_BUDGET < 0:
            raise ValueError("SIM_NODE_BUDGET must be ≥ 0 (0 = unbounded)")
        if self.SELFTEST_TRIALS < 1:
            raise ValueError("SIM_SELFTEST_TRIALS must be ≥ 1")
        return True

    def resolved_workers(self, requested: Optional[int] = None) -> int:
        workers = self.WORKERS if requested is None else requested
        return workers if workers > 0 else (os.cpu_count() or 1)


class McsConfig(BaseModel):
    """Modulation order and code rate of one codeword"""
    model_config = ConfigDict(frozen=True)

    modulation_order: int = 4
    code_rate: str = '1/2'

    @field_validator('modulation_order')
    @classmethod
    def _check_order(cls, value: int) -> int:
        if value not in SUPPORTED_MODULATIONS:
            raise ValueError(f"modulation_order must be one of {SUPPORTED_MODULATIONS}")
        return value

    @field_validator('code_rate')
    @classmethod
    def _check_rate(cls, value: str) -> str:
        value = str(value).strip()
        if value not in profile_catalog.supported_rates():
            raise ValueError(f"code_rate must be one of {profile_catalog.supported_rates()}")
        pattern = profile_catalog.puncturing_pattern(value)
        rate = Fraction(value)
        if rate >= Fraction(1, 2):
            keep_fraction = Fraction(sum(pattern), len(pattern))
            if Fraction(1, 2) / keep_fraction != rate:
                raise ValueError(f"puncturing pattern {pattern} does not realize rate {value}")
        return value

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.modulation_order))

    @property
    def rate(self) -> Fraction:
        return Fraction(self.code_rate)

    @property
    def modulation_name(self) -> str:
        return MODULATION_NAMES[self.modulation_order]

    @property
    def token(self) -> str:
        return f"{self.modulation_order}:{self.code_rate}"


class PilotConfig(BaseModel):
    """Comb-type reference signals on whole OFDM symbols"""
    model_config = ConfigDict(frozen=True)

    pilot_symbol_indices: Tuple[int, ...] = (2, 11)
    comb_size: Optional[int] = None
    pilot_power: float = 1.0

    @field_validator('pilot_symbol_indices')
    @classmethod
    def _check_indices(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) == 0:
            raise ValueError("pilot_symbol_indices must name at least one OFDM symbol")
        if min(value) < 0:
            raise ValueError("pilot_symbol_indices must be ≥ 0")
        if len(set(value)) != len(value):
            raise ValueError("pilot_symbol_indices must be distinct")
        return tuple(sorted(value))

    @field_validator('comb_size')
    @classmethod
    def _check_comb(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("comb_size must be ≥ 1")
        return value

    @field_validator('pilot_power')
    @classmethod
    def _check_power(cls, value: float) -> float:
        if value != 1.0:
            raise ValueError("pilot_power must equal the data power (1.0)")
        return value


def parse_mcs_set(text: str) -> Tuple[McsConfig, ...]:
    """Parse '4:1/2,16:3/4' into MCS entries"""
    entries = []
    for token in str(text).split(','):
        if not token.strip():
            continue
        order, rate = profile_catalog.parse_mcs_token(token)
        entries.append(McsConfig(modulation_order=order, code_rate=rate))
    return tuple(entries)


class SimConfig(BaseModel):
    """One simulation scenario"""
    model_config = ConfigDict(frozen=True)

    carrier_hz: float = 2e9
    scs_hz: float = 3e4
    n_subcarriers: int = 48
    n_symbols: int = 14
    delay_spread_ns: float = 100.0
    n_users: int = 4
    n_rx: int = 1
    speed_kmh: float = 5.0
    snr_db_list: Tuple[float, ...] = (4.0,)
    detector: str = 'sphere'
    mcs: McsConfig = McsConfig()
    mcs_set: Tuple[McsConfig, ...] = parse_mcs_set(DEFAULT_MCS_SET)
    n_drops: int = 200
    master_seed: int = 20240611
    idd_iterations: int = 3
    llr_clip: float = 16.0
    pilot: PilotConfig = PilotConfig()
    csi: str = 'practical'
    noma_power_split: float = 0.8
    node_budget: int = 0
    dump_channel: bool = False

    @model_validator(mode='before')
    @classmethod
    def _pilot_comb_follows_users(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        n_users = data.get('n_users', cls.model_fields['n_users'].default)
        pilot = data.get('pilot')
        if pilot is None:
            return {**data, 'pilot': {'comb_size': n_users}}
        if isinstance(pilot, dict) and pilot.get('comb_size') is None:
            return {**data, 'pilot': {**pilot, 'comb_size': n_users}}
        if isinstance(pilot, PilotConfig) and pilot.comb_size is None:
            return {**data, 'pilot': pilot.model_copy(update={'comb_size': n_users})}
        return data

    @field_validator('carrier_hz')
    @classmethod
    def _check_carrier(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("carrier_hz must be > 0")
        return value

    @field_validator('scs_hz')
    @classmethod
    def _check_scs(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("scs_hz must be > 0")
        return value

    @field_validator('n_subcarriers', 'n_symbols')
    @classmethod
    def _check_grid(cls, value: int, info) -> int:
        if value < 1:
            raise ValueError(f"{info.field_name} must be ≥ 1")
        return value

    @field_validator('delay_spread_ns')
    @classmethod
    def _check_delay_spread(cls, value: float) -> float:
        if value < 0:
            raise ValueError("delay_spread_ns must be ≥ 0")
        return value

    @field_validator('n_users')
    @classmethod
    def _check_users(cls, value: int) -> int:
        if value < 1:
            raise ValueError("n_users must be ≥ 1")
        if value > 6:
            raise ValueError("n_users must be ≤ 6")
        return value

    @field_validator('n_rx')
    @classmethod
    def _check_rx(cls, value: int) -> int:
        if value < 1:
            raise ValueError("n_rx must be ≥ 1")
        return value

    @field_validator('speed_kmh')
    @classmethod
    def _check_speed(cls, value: float) -> float:
        if value < 0:
            raise ValueError("speed_kmh must be ≥ 0")
        return value

    @field_validator('snr_db_list')
    @classmethod
    def _check_snrs(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if len(value) == 0:
            raise ValueError("snr_db_list must contain at least one SNR")
        return value

    @field_validator('detector')
    @classmethod
    def _check_detector(cls, value: str) -> str:
        if value not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}")
        return value

    @field_validator('mcs_set')
    @classmethod
    def _check_mcs_set(cls, value: Tuple[McsConfig, ...]) -> Tuple[McsConfig, ...]:
        if len(value) == 0:
            raise ValueError("mcs_set must contain at least one MCS")
        return value

    @field_validator('n_drops')
    @classmethod
    def _check_drops(cls, value: int) -> int:
        if value < 1:
            raise ValueError("n_drops must be ≥ 1")
        return value

    @field_validator('master_seed')
    @classmethod
    def _check_seed(cls, value: int) -> int:
        if not 0 <= value < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        return value

    @field_validator('idd_iterations')
    @classmethod
    def _check_iterations(cls, value: int) -> int:
        if value < 1:
            raise ValueError("idd_iterations must be ≥ 1")
        return value

    @field_validator('llr_clip')
    @classmethod
    def _check_clip(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("llr_clip must be > 0")
        return value

    @field_validator('csi')
    @classmethod
    def _check_csi(cls, value: str) -> str:
        if value not in CSI_MODES:
            raise ValueError(f"csi must be one of {CSI_MODES}")
        return value

    @field_validator('noma_power_split')
    @classmethod
    def _check_split(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("noma_power_split must lie in (0, 1)")
        return value

    @field_validator('node_budget')
    @classmethod
    def _check_budget(cls, value: int) -> int:
        if value < 0:
            raise ValueError("node_budget must be ≥ 0 (0 = unbounded)")
        return value

    @model_validator(mode='after')
    def _check_scenario(self) -> 'SimConfig':
        result = ScenarioValidator.validate_scenario(self)
        if not result["valid"]:
            raise ValueError(result["error"])
        return self


class ValidatedConfig(BaseModel):
    """A scenario that passed validation, with derived quantities attached"""
    model_config = ConfigDict(frozen=True)

    config: SimConfig
    doppler_hz: float
    symbol_duration_s: float
    slot_duration_s: float
    overhead_fraction: float
    n_data_symbols: int

    @property
    def noise_variances(self) -> List[float]:
        return [float(10.0 ** (-snr / 10.0)) for snr in self.config.snr_db_list]


def _first_error_message(error: ValidationError) -> str:
    first = error.errors()[0]
    message = first['msg']
    if message.startswith('Value error, '):
        message = message[len('Value error, '):]
    location = '.'.join(str(part) for part in first.get('loc', ()))
    if location:
        return f"{message} (field '{location}', got {first.get('input')!r})"
    return message


def validate(config: Union[SimConfig, ValidatedConfig, Dict[str, Any]]) -> ValidatedConfig:
    """Validate a scenario and attach Doppler, slot timing and pilot overhead"""
    if isinstance(config, ValidatedConfig):
        config = config.config
    raw = config.model_dump() if isinstance(config, SimConfig) else dict(config)
    try:
        checked = SimConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_first_error_message(e), str(e))

    symbol_duration_s = (15e3 / checked.scs_hz) * 1e-3 / 14.0
    n_pilots = len(checked.pilot.pilot_symbol_indices)
    return ValidatedConfig(
        config=checked,
        doppler_hz=doppler_from_speed(checked.speed_kmh, checked.carrier_hz),
        symbol_duration_s=symbol_duration_s,
        slot_duration_s=symbol_duration_s * checked.n_symbols,
        overhead_fraction=n_pilots / checked.n_symbols,
        n_data_symbols=checked.n_symbols - n_pilots,
    )


def derive_seed(master_seed: int, stream_label: str, drop_index: int) -> int:
    """64-bit seed of a labelled random stream; a pure function of the triple"""
    digest = hashlib.blake2b(f"{master_seed}|{stream_label}|{drop_index}".encode('utf-8'), digest_size=8)
    return int.from_bytes(digest.digest(), 'little')


def _cast_number(value: float, cast, source: str):
    if cast is int:
        if not float(value).is_integer():
            raise ConfigError(f"'{source}' is not an integer", f"parsed value {value}")
        return int(value)
    return cast(value)


def parse_number_list(text: str, cast=float) -> List:
    """Parse '1,2,4', '-10..20' or '-10..20:2' into a list of numbers; cast=int rejects fractions"""
    values: List = []
    for part in str(text).split(','):
        part = part.strip()
        if not part:
            continue
        if '..' in part:
            start_text, _, rest = part.partition('..')
            stop_text, _, step_text = rest.partition(':')
            start, stop = float(start_text), float(stop_text)
            step = float(step_text) if step_text else 1.0
            if step <= 0:
                raise ValueError(f"range step must be > 0 in '{part}'")
            grid = np.arange(start, stop + step / 2.0, step)
            values.extend(_cast_number(round(float(v), 10), cast, part) for v in grid)
        else:
            values.append(_cast_number(float(part), cast, part))
    return values


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError(f"'{text}' is not a boolean")


# Flat config-file keys and how to read their text values
FIELD_PARSERS = {
    'carrier_hz': float,
    'scs_hz': float,
    'n_subcarriers': int,
    'n_symbols': int,
    'delay_spread_ns': float,
    'n_users': int,
    'n_rx': int,
    'speed_kmh': float,
    'snr_db_list': lambda text: tuple(parse_number_list(text, float)),
    'detector': lambda text: str(text).strip(),
    'modulation_order': int,
    'code_rate': lambda text: str(text).strip(),
    'mcs_set': parse_mcs_set,
    'n_drops': int,
    'master_seed': int,
    'idd_iterations': int,
    'llr_clip': float,
    'pilot_symbol_indices': lambda text: tuple(parse_number_list(text, int)),
    'comb_size': lambda text: None if str(text).strip().lower() in ('', 'none') else int(text),
    'pilot_power': float,
    'csi': lambda text: str(text).strip(),
    'noma_power_split': float,
    'node_budget': int,
    'dump_channel': _parse_bool,
}

_MCS_KEYS = ('modulation_order', 'code_rate')
_PILOT_KEYS = ('pilot_symbol_indices', 'comb_size', 'pilot_power')


def flatten_config(config: SimConfig) -> Dict[str, Any]:
    """Flat key -> value view of a scenario (the config-file schema)"""
    flat: Dict[str, Any] = {}
    for name in SimConfig.model_fields:
        if name in ('mcs', 'pilot'):
            continue
        flat[name] = getattr(config, name)
    for name in _MCS_KEYS:
        flat[name] = getattr(config.mcs, name)
    for name in _PILOT_KEYS:
        flat[name] = getattr(config.pilot, name)
    return flat


def build_config(values: Dict[str, Any]) -> SimConfig:
    """Build and validate a scenario from flat keys; string values are parsed"""
    unknown = sorted(set(values) - set(FIELD_PARSERS))
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")

    parsed: Dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, str):
            try:
                value = FIELD_PARSERS[key](value)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"Cannot parse config key '{key}' = {value!r}", str(e))
        parsed[key] = value

    data: Dict[str, Any] = {k: v for k, v in parsed.items() if k not in _MCS_KEYS + _PILOT_KEYS}
    mcs = {k: parsed[k] for k in _MCS_KEYS if k in parsed}
    if mcs:
        data['mcs'] = mcs
    pilot = {k: parsed[k] for k in _PILOT_KEYS if k in parsed}
    if pilot:
        data['pilot'] = pilot
    return validate(data).config


def load_config_file(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> SimConfig:
    """Read a flat key=value scenario file ('#' comments allowed) and apply overrides"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    values: Dict[str, Any] = {k: v for k, v in dotenv_values(path).items() if v is not None}
    values.update(overrides or {})
    logger.info(f"🔍 Loaded {len(values)} scenario keys from {path}")
    return build_config(values)


def with_overrides(config: SimConfig, **updates: Any) -> SimConfig:
    """Re-validated copy of a scenario; a new n_users resets the pilot comb"""
    flat = flatten_config(config)
    if 'n_users' in updates and 'comb_size' not in updates:
        flat['comb_size'] = None
    flat.update(updates)
    return build_config(flat)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple) and value and isinstance(value[0], McsConfig):
        return ','.join(m.token for m in value)
    if isinstance(value, tuple):
        return ','.join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if value is None:
        return 'none'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(config: SimConfig) -> str:
    """Render a scenario in the flat config-file format"""
    return '\n'.join(f"{key}={_format_value(value)}" for key, value in flatten_config(config).items()) + '\n'
