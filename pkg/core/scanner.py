# core/scanner.py

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from analyzers.pairing_analyzer import PairingRow
from analyzers.similarity_analyzer import SimilarityRecord
from .engine import SurgeryReport
from .errors import AnalysisError, ValidationError
from .partition import TaskId

METADATA_FILE = 'run_metadata.json'
SIMILARITY_FILE = 'similarities.csv'
REPORTS_FILE = 'surgery_reports.json'
PAIRING_FILE = 'pairing.csv'


@dataclass
class RecordSet:
    """Everything a simulate run left in its output directory."""
    path: Path
    metadata: Dict = field(default_factory=dict)
    tasks: List[TaskId] = field(default_factory=list)
    families: Optional[Dict[TaskId, str]] = None
    similarity_records: List[SimilarityRecord] = field(default_factory=list)
    reports: List[SurgeryReport] = field(default_factory=list)
    pairing: List[PairingRow] = field(default_factory=list)
    modes: Optional[List[str]] = None
    success: bool = True
    error_message: Optional[str] = None


class RecordScanner:
    """Loads and validates a records directory written by the simulate command."""

    def __init__(self, records_dir: str):
        self.records_dir = Path(records_dir)
        self.logger = logging.getLogger('gradvac.scanner')

    def scan(self) -> RecordSet:
        """Load metadata, similarities, reports and pairing rows; never raises."""
        records = RecordSet(self.records_dir)
        try:
            if not self.records_dir.is_dir():
                raise AnalysisError(f"Records directory not found: {self.records_dir}")
            records.metadata = self._read_json(METADATA_FILE)
            records.tasks, records.families = self._parse_tasks(records.metadata)
            if records.metadata.get('modes'):
                records.modes = [str(mode) for mode in records.metadata['modes']]
                self.logger.info(f"{self.records_dir} holds one run per mode: {records.modes}")
                return records
            records.similarity_records = self._read_similarities(records.tasks)
            records.reports = self._read_reports()
            records.pairing = self._read_pairing()
            if not records.similarity_records and not records.reports:
                raise AnalysisError(f"No records found in {self.records_dir}")
            self.logger.info(f"Loaded {len(records.similarity_records)} similarity records "
                             f"and {len(records.reports)} surgery reports")
        except (ValidationError, OSError, ValueError, KeyError, TypeError) as e:
            self.logger.error(f"Error scanning {self.records_dir}: {e}")
            records.success = False
            records.error_message = str(e)
        return records

    def _read_json(self, name: str):
        path = self.records_dir / name
        if not path.exists():
            raise AnalysisError(f"Missing {name} in {self.records_dir}")
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def _parse_tasks(self, metadata: Dict):
        entries = metadata.get('tasks')
        if not entries:
            raise AnalysisError(f"{METADATA_FILE} lists no tasks")
        tasks = [TaskId(int(entry['id']), str(entry['name'])) for entry in entries]
        families = None
        if all(entry.get('family') for entry in entries):
            families = {task: str(entry['family']) for task, entry in zip(tasks, entries)}
        return tasks, families

    def _read_similarities(self, tasks: List[TaskId]) -> List[SimilarityRecord]:
        path = self.records_dir / SIMILARITY_FILE
        if not path.exists():
            return []
        by_name = {task.name: task for task in tasks}
        cells: Dict[int, Dict[str, Dict]] = {}
        with open(path, 'r', encoding='utf-8', newline='') as f:
            for line, row in enumerate(csv.DictReader(f), start=2):
                try:
                    task_i, task_j = by_name[row['task_i']], by_name[row['task_j']]
                    value = float(row['cosine']) if row['cosine'] != '' else math.nan
                    step = int(row['step'])
                except KeyError as e:
                    raise AnalysisError(f"{SIMILARITY_FILE}:{line}: unknown task or column {e}")
                except ValueError as e:
                    raise AnalysisError(f"{SIMILARITY_FILE}:{line}: {e}")
                cells.setdefault(step, {}).setdefault(row['group'], {})[(task_i, task_j)] = value

        records = []
        for step in sorted(cells):
            present = sorted({t for group in cells[step].values() for pair in group for t in pair})
            index = {task: k for k, task in enumerate(present)}
            matrices = {}
            for group, values in sorted(cells[step].items()):
                matrix = np.full((len(present), len(present)), np.nan)
                for (task_i, task_j), value in values.items():
                    matrix[index[task_i], index[task_j]] = value
                    matrix[index[task_j], index[task_i]] = value
                matrices[group] = matrix
            records.append(SimilarityRecord(step, present, matrices))
        return records

    def _read_reports(self) -> List[SurgeryReport]:
        path = self.records_dir / REPORTS_FILE
        if not path.exists():
            return []
        document = self._read_json(REPORTS_FILE)
        return [SurgeryReport.from_dict(entry) for entry in document.get('reports', [])]

    def _read_pairing(self) -> List[PairingRow]:
        path = self.records_dir / PAIRING_FILE
        if not path.exists():
            return []
        rows = []
        with open(path, 'r', encoding='utf-8', newline='') as f:
            for line, row in enumerate(csv.DictReader(f), start=2):
                try:
                    cosine = float(row['mean_cosine']) if row['mean_cosine'] != '' else math.nan
                    rows.append(PairingRow(row['anchor'], row['partner'], cosine,
                                           float(row['anchor_loss']), int(row['steps'])))
                except KeyError as e:
                    raise AnalysisError(f"{PAIRING_FILE}:{line}: missing column {e}")
                except ValueError as e:
                    raise AnalysisError(f"{PAIRING_FILE}:{line}: {e}")
        return rows
