#!/usr/bin/env python3
"""
Command-line front end of the NOMA uplink link simulator
Subcommands: capacity, link, sweep, selftest
"""

import argparse
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from capacity import capacity_table
from config import (APP_VERSION, DETECTORS, Config, SimConfig, build_config, config_to_text,
                    load_config_file, parse_mcs_set, parse_number_list, validate, with_overrides)
from link_simulator import SweepAxes, run_link, run_sweep
from utils.error_handler import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, ConfigError, error_handler
from utils.results_writer import ResultsWriter, RunManifest

logger = logging.getLogger(__name__)

LIST_FLAGS = ('--snr', '--ues', '--speed-kmh')
NEGATIVE_VALUE = re.compile(r'^-\d|^-\.\d')


def build_parser() -> argparse.ArgumentParser:
    settings = Config()
    parser = argparse.ArgumentParser(
        prog='cli.py',
        description='Link-level Monte Carlo simulator for overloaded non-orthogonal uplink',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {APP_VERSION}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', type=Path, default=Path(settings.OUTPUT_DIR), help='output directory')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--log-level', default=settings.LOG_LEVEL, help='logging level (default: SIM_LOG_LEVEL)')

    scenario = argparse.ArgumentParser(add_help=False, parents=[common])
    scenario.add_argument('--config', type=Path, help='flat key=value scenario file (a run manifest works too)')

    capacity = subparsers.add_parser('capacity', parents=[common],
                                     help='ergodic sum capacity over SNR and number of users')
    capacity.add_argument('--snr', default='-10..20', help='SNR list in dB, e.g. -10..20 or -2,0,2')
    capacity.add_argument('--ues', default='1,2,4,6', help='user counts, e.g. 1,2,4,6')
    capacity.add_argument('--draws', type=int, default=100_000, help='Monte Carlo draws per point')
    capacity.add_argument('--name', default='capacity', help='output file stem')

    for name, help_text in (('link', 'one operating point with the configured MCS'),
                            ('sweep', 'Cartesian sweep with genie MCS selection')):
        sub = subparsers.add_parser(name, parents=[scenario], help=help_text)
        sub.add_argument('--drops', type=int, help='Monte Carlo slots per point')
        sub.add_argument('--snr', help='SNR list in dB (range syntax a..b[:step] allowed)')
        sub.add_argument('--ues', help='user counts')
        sub.add_argument('--speed-kmh', help='radial speeds in km/h')
        sub.add_argument('--detector', help=f'detectors, comma-separated from {",".join(DETECTORS)}')
        sub.add_argument('--mcs', help='MCS list as M:rate tokens, e.g. 4:1/2,16:3/4')
        sub.add_argument('--csi', choices=('practical', 'genie'), help='channel knowledge at the receiver')
        sub.add_argument('--workers', type=int, help='parallel worker processes (default: SIM_WORKERS or all cores)')
        sub.add_argument('--dump-channel', action='store_true', help='also write per-RE channel CSVs')
        sub.add_argument('--name', default=name, help='output file stem')

    selftest = subparsers.add_parser('selftest', help='oracle-equivalence, fading and complexity checks')
    selftest.add_argument('--trials', type=int, default=settings.SELFTEST_TRIALS, help='sphere oracle trials')
    selftest.add_argument('--log-level', default=settings.LOG_LEVEL)
    return parser


def join_negative_values(argv: Sequence[str]) -> List[str]:
    """'--snr -2,0,2' -> '--snr=-2,0,2' so argparse does not read -2 as a flag"""
    joined: List[str] = []
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg in LIST_FLAGS and i + 1 < len(argv) and NEGATIVE_VALUE.match(argv[i + 1]):
            joined.append(f"{arg}={argv[i + 1]}")
            i += 2
            continue
        joined.append(arg)
        i += 1
    return joined


def _split(text: str) -> List[str]:
    return [part.strip() for part in text.split(',') if part.strip()]


def scenario_from_args(args: argparse.Namespace) -> SimConfig:
    """Config file (if any) plus command-line overrides"""
    overrides: Dict[str, Any] = {}
    node_budget = Config().NODE_BUDGET
    if node_budget:
        overrides['node_budget'] = node_budget
    if args.seed is not None:
        overrides['master_seed'] = args.seed
    if getattr(args, 'drops', None) is not None:
        overrides['n_drops'] = args.drops
    if getattr(args, 'csi', None) is not None:
        overrides['csi'] = args.csi
    if getattr(args, 'dump_channel', False):
        overrides['dump_channel'] = True
    if getattr(args, 'snr', None) is not None:
        overrides['snr_db_list'] = _parse_axis(args.snr, float, None)

    if args.config is not None:
        return load_config_file(args.config, overrides)
    return build_config(overrides)


def _first_only(values: List, flag: str, command: str):
    if len(values) != 1:
        raise ConfigError(f"'{command}' takes a single value for {flag}, got {values}")
    return values[0]


def _parse_axis(text: Optional[str], cast, default):
    if text is None:
        return default
    try:
        return tuple(parse_number_list(text, cast))
    except ValueError as e:
        raise ConfigError(f"Cannot parse list '{text}'", str(e))


def _parse_mcs(text: Optional[str]):
    if text is None:
        return None
    try:
        return parse_mcs_set(text)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"Cannot parse MCS list '{text}'", str(e))


def _workers(args: argparse.Namespace) -> int:
    return Config().resolved_workers(args.workers)


@error_handler("Capacity sweep failed")
def run_capacity(args: argparse.Namespace) -> int:
    snr_values = _parse_axis(args.snr, float, None)
    users = _parse_axis(args.ues, int, None)
    seed = args.seed if args.seed is not None else SimConfig().master_seed
    if args.draws < 1:
        raise ConfigError(f"--draws must be ≥ 1, got {args.draws}")

    writer = ResultsWriter(args.out)
    manifest = RunManifest(
        config_text=f"snr_db_list={args.snr}\nusers={args.ues}\ndraws={args.draws}\n",
        master_seed=seed, version=APP_VERSION, command='capacity',
        output_paths=[str(args.out / f"{args.name}.csv")])
    manifest_path = manifest.write(args.out / f"{args.name}_manifest.txt")

    writer.write_frame(capacity_table(snr_values, users, args.draws, seed), f"{args.name}.csv")
    manifest.finish(manifest_path)
    return EXIT_OK


def _output_paths(args: argparse.Namespace) -> List[str]:
    return [str(args.out / f"{args.name}.csv"), str(args.out / f"{args.name}_complexity.csv")]


@error_handler("Link simulation failed")
def run_link_command(args: argparse.Namespace) -> int:
    scenario = scenario_from_args(args)
    updates: Dict[str, Any] = {}
    if args.ues is not None:
        updates['n_users'] = int(_first_only(_parse_axis(args.ues, int, None), '--ues', 'link'))
    if args.speed_kmh is not None:
        updates['speed_kmh'] = _first_only(_parse_axis(args.speed_kmh, float, None), '--speed-kmh', 'link')
    if args.detector is not None:
        updates['detector'] = _first_only(_split(args.detector), '--detector', 'link')
    mcs = _parse_mcs(args.mcs)
    if mcs is not None:
        updates['modulation_order'] = _first_only(list(mcs), '--mcs', 'link').modulation_order
        updates['code_rate'] = mcs[0].code_rate
    if updates:
        scenario = with_overrides(scenario, **updates)
    validated = validate(scenario)

    manifest = RunManifest(config_text=config_to_text(scenario), master_seed=scenario.master_seed,
                           version=APP_VERSION, command='link', output_paths=_output_paths(args))
    manifest_path = manifest.write(args.out / f"{args.name}_manifest.txt")

    workers = _workers(args)
    records, dumps = [], {}
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for snr_db in scenario.snr_db_list:
            record, point = run_link(validated, snr_db, [scenario.mcs], executor)
            records.append(record)
            if point.channels and not dumps:
                dumps[f"K{scenario.n_users}_v{scenario.speed_kmh:g}"] = point.channels
    finally:
        if executor is not None:
            executor.shutdown()

    writer = ResultsWriter(args.out)
    writer.write_results(records, args.name)
    if dumps:
        writer.write_channel_dumps(dumps, args.name)
    manifest.finish(manifest_path)
    return EXIT_OK


@error_handler("Sweep failed")
def run_sweep_command(args: argparse.Namespace) -> int:
    scenario = scenario_from_args(args)
    detectors = tuple(_split(args.detector)) if args.detector is not None else (scenario.detector,)
    unknown = [d for d in detectors if d not in DETECTORS]
    if unknown:
        raise ConfigError(f"Unknown detector(s): {', '.join(unknown)}; choose from {', '.join(DETECTORS)}")
    axes = SweepAxes(
        snr_db=scenario.snr_db_list,
        n_users=_parse_axis(args.ues, int, (scenario.n_users,)),
        speed_kmh=_parse_axis(args.speed_kmh, float, (scenario.speed_kmh,)),
        detector=detectors,
        mcs=_parse_mcs(args.mcs),
    )

    manifest = RunManifest(config_text=config_to_text(scenario), master_seed=scenario.master_seed,
                           version=APP_VERSION, command='sweep',
                           output_paths=_output_paths(args))
    manifest_path = manifest.write(args.out / f"{args.name}_manifest.txt")

    result = run_sweep(scenario, axes, workers=_workers(args))
    writer = ResultsWriter(args.out)
    writer.write_results(result.records, args.name)
    if result.channel_dumps:
        writer.write_channel_dumps(result.channel_dumps, args.name)
    manifest.finish(manifest_path)
    return EXIT_OK


@error_handler("Self-test failed")
def run_selftest(args: argparse.Namespace) -> int:
    from validate_system import SelfTestValidator
    return EXIT_OK if SelfTestValidator(trials=args.trials).run_validation() else EXIT_RUNTIME_ERROR


COMMANDS = {
    'capacity': run_capacity,
    'link': run_link_command,
    'sweep': run_sweep_command,
    'selftest': run_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments and dispatch; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(join_negative_values(argv))
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else EXIT_CONFIG_ERROR
        return code

    level = getattr(logging, str(args.log_level).upper(), None)
    if not isinstance(level, int):
        print(f"❌ Unknown log level '{args.log_level}'", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    logger.info(f"🚀 NOMA uplink simulator {APP_VERSION}: {args.command}")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
