"""
Results writer for the link simulator
Results CSV with the fixed column schema, companion complexity CSV, channel dumps and the run manifest
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'

LEADING_COLUMNS = ['snr_db', 'n_users', 'n_rx', 'speed_kmh', 'detector', 'modulation', 'code_rate', 'n_drops']
TRAILING_COLUMNS = ['goodput_se', 'overhead_fraction', 'mults_per_re', 'ratio_vs_sic', 'truncation_rate',
                    'master_seed']
COMPLEXITY_COLUMNS = ['snr_db', 'n_users', 'speed_kmh', 'detector', 'modulation', 'code_rate',
                      'mults_per_re', 'nodes_per_re', 'decoder_ops_per_re', 'wall_time_s', 'goodput_stderr',
                      'iteration_bler']
CHANNEL_DUMP_COLUMNS = ['drop', 't', 'f', 'user', 'rx', 're_part', 'im_part']


class ResultsWriter:
    """Turns metrics records into the CSV tables a run emits"""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)

    @staticmethod
    def bler_columns(max_users: int) -> List[str]:
        return [f"bler_user_{k}" for k in range(max_users)]

    def results_frame(self, records: Sequence) -> pd.DataFrame:
        """One row per record; users beyond a row's K leave their BLER cell empty"""
        max_users = max((r.n_users for r in records), default=0)
        columns = LEADING_COLUMNS + self.bler_columns(max_users) + TRAILING_COLUMNS
        rows = []
        for record in records:
            row = {name: getattr(record, name) for name in LEADING_COLUMNS + TRAILING_COLUMNS}
            for k, value in enumerate(record.bler):
                row[f"bler_user_{k}"] = value
            rows.append(row)
        return pd.DataFrame(rows, columns=columns)

    def complexity_frame(self, records: Sequence) -> pd.DataFrame:
        rows = []
        for record in records:
            row = {name: getattr(record, name) for name in COMPLEXITY_COLUMNS if name != 'iteration_bler'}
            if record.iteration_bler is not None:
                # "it1:u0/u1;it2:..." keeps the per-iteration BLER in one cell
                row['iteration_bler'] = ';'.join(
                    f"it{i + 1}:" + '/'.join(f"{b:.6g}" for b in row_bler)
                    for i, row_bler in enumerate(record.iteration_bler))
            else:
                row['iteration_bler'] = ''
            rows.append(row)
        return pd.DataFrame(rows, columns=COMPLEXITY_COLUMNS)

    @staticmethod
    def channel_dump_frame(channels: Sequence[Tuple[int, np.ndarray]]) -> pd.DataFrame:
        """Long format: one row per (drop, t, f, user, rx)"""
        frames = []
        for drop, h in channels:
            t, f, rx, user = np.indices(h.shape)
            frames.append(pd.DataFrame({
                'drop': drop,
                't': t.ravel(),
                'f': f.ravel(),
                'user': user.ravel(),
                'rx': rx.ravel(),
                're_part': h.real.ravel(),
                'im_part': h.imag.ravel(),
            }))
        if not frames:
            return pd.DataFrame(columns=CHANNEL_DUMP_COLUMNS)
        return pd.concat(frames, ignore_index=True)[CHANNEL_DUMP_COLUMNS]

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info(f"💾 Wrote {len(frame)} rows to {path}")
        return path

    def write_results(self, records: Sequence, name: str) -> Tuple[Path, Path]:
        """<name>.csv with the fixed schema plus <name>_complexity.csv"""
        results_path = self.write_frame(self.results_frame(records), f"{name}.csv")
        complexity_path = self.write_frame(self.complexity_frame(records), f"{name}_complexity.csv")
        return results_path, complexity_path

    def write_channel_dumps(self, dumps: Dict[str, Sequence[Tuple[int, np.ndarray]]], name: str) -> List[Path]:
        return [self.write_frame(self.channel_dump_frame(channels), f"{name}_channel_{key}.csv")
                for key, channels in dumps.items()]


@dataclass
class RunManifest:
    """Config snapshot and provenance of one run, written before any result file"""
    config_text: str
    master_seed: int
    version: str
    command: str
    output_paths: List[str] = field(default_factory=list)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None

    def render(self) -> str:
        header = [
            f"# version={self.version}",
            f"# command={self.command}",
            f"# master_seed={self.master_seed}",
            f"# started_at={self.started_at}",
            f"# outputs={','.join(self.output_paths)}",
        ]
        if self.finished_at is not None:
            header.append(f"# finished_at={self.finished_at}")
        # Body is a loadable config file
        return '\n'.join(header) + '\n' + self.config_text

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render(), encoding='utf-8')
        logger.info(f"💾 Manifest written to {path}")
        return path

    def finish(self, path: Path) -> Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        return self.write(path)
