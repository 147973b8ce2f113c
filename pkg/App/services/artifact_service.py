"""
Artifact service for writing experiment outputs to the run directory.

Results are serialised deterministically (sorted keys, fixed separators) so
that a rerun with the same seeds reproduces every metrics file byte for byte.
"""

import csv
import io
import json
import logging
import os
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

METRICS_JSON = 'metrics.json'
METRICS_CSV = 'metrics.csv'
TIMINGS_JSON = 'timings.json'
CONFIG_JSON = 'config.json'
CHECKPOINT_DIR = 'checkpoints'
MAPS_DIR = 'maps'
DATA_DIR = 'data'
DATASET_FILE = 'trajectories.jsonl'


class ArtifactService:
    """
    Service for laying out and writing the files of one run directory.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def checkpoint_path(self, name: str) -> str:
        return self.path(CHECKPOINT_DIR, f"{name}.ckpt")

    def dataset_path(self) -> str:
        return self.path(DATA_DIR, DATASET_FILE)

    def maps_dir(self) -> str:
        return self.path(MAPS_DIR)

    @staticmethod
    def dumps_json(payload: Mapping[str, Any]) -> str:
        return json.dumps(payload, sort_keys=True, indent=2, default=_plain) + '\n'

    @staticmethod
    def dumps_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
        """
        Render rows as CSV with a fixed column order; floats use ``repr`` precision.
        """
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(columns), extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in columns})
        return buffer.getvalue()

    def _write(self, name: str, text: str) -> str:
        target = self.path(name)
        os.makedirs(os.path.dirname(target) or '.', exist_ok=True)
        with open(target, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        logger.info('Artifact written', extra={'event': 'artifact_written', 'path': target})
        return target

    def write_json(self, payload: Mapping[str, Any], name: str = METRICS_JSON) -> str:
        return self._write(name, self.dumps_json(payload))

    def write_csv(self, rows: Iterable[Mapping[str, Any]], columns: Sequence[str], name: str = METRICS_CSV) -> str:
        return self._write(name, self.dumps_csv(list(rows), columns))


def _plain(value: Any) -> Any:
    """JSON fallback for numpy scalars and arrays."""
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'value'):
        return value.value
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def _cell(value: Any) -> Any:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return value
