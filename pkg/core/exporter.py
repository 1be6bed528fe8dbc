# core/exporter.py

"""Byte-stable CSV and JSON rendering of runs and analyses.

Floats are written as their shortest round-trip decimal (repr); missing
values become an empty CSV field or JSON null. Nothing here reads clocks.
"""

import csv
import io
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .engine import SurgeryReport
from .partition import TaskId


def format_float(value: float) -> str:
    value = float(value)
    return '' if math.isnan(value) else repr(value)


def to_plain(data: Any) -> Any:
    """Recursively convert numpy values to JSON-ready python values, NaN to None."""
    if isinstance(data, dict):
        return {str(key): to_plain(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_plain(value) for value in data]
    if isinstance(data, np.ndarray):
        return to_plain(data.tolist())
    if isinstance(data, (bool, np.bool_)):
        return bool(data)
    if isinstance(data, (int, np.integer)):
        return int(data)
    if isinstance(data, (float, np.floating)):
        value = float(data)
        return None if math.isnan(value) else value
    if isinstance(data, TaskId):
        return str(data)
    return data


def render_json(data: Any) -> str:
    return json.dumps(to_plain(data), sort_keys=True, indent=2, allow_nan=False) + '\n'


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                         for v in row])
    return buffer.getvalue()


SIMILARITY_HEADER = ('step', 'group', 'task_i', 'task_j', 'cosine')


def similarity_rows(records) -> List[List[Any]]:
    """Long-format rows (i <= j) of every recorded matrix."""
    rows = []
    for record in records:
        names = [str(task) for task in record.tasks]
        for group in sorted(record.matrices):
            matrix = record.matrices[group]
            for a in range(len(names)):
                for b in range(a, len(names)):
                    rows.append([record.step, group, names[a], names[b], float(matrix[a, b])])
    return rows


def loss_rows(run) -> List[List[Any]]:
    """One row per visited point; step-level columns are empty on the last one."""
    rows = []
    for k, joint in enumerate(run.joint_losses):
        row = [k, float(joint)] + [float(v) for v in run.task_losses[k]]
        if k < run.steps:
            row += [float(run.grad_norms_sq[k]), float(run.theorem_a[k]),
                    run.reports[k].fired_total, run.distinct_tasks[k]]
        else:
            row += ['', '', '', '']
        rows.append(row)
    return rows


def loss_header(task_names: Sequence[str]) -> List[str]:
    return (['step', 'joint_loss'] + [f'loss_{name}' for name in task_names]
            + ['grad_norm_sq', 'theorem_a', 'fired', 'distinct_tasks'])


def snapshot_header(dimension: int) -> List[str]:
    return ['step'] + [f'theta_{k}' for k in range(dimension)]


def snapshot_rows(run) -> List[List[Any]]:
    """Parameter vector at every visited point, initial point first."""
    return [[k] + [float(v) for v in theta] for k, theta in enumerate(run.snapshots)]


PAIRING_HEADER = ('anchor', 'partner', 'mean_cosine', 'anchor_loss', 'steps')


def pairing_rows(outcomes) -> List[List[Any]]:
    return [[o.anchor, o.partner, float(o.mean_cosine), float(o.anchor_loss), o.steps]
            for o in outcomes]


def reports_document(reports: Sequence[SurgeryReport]) -> Dict:
    return {'reports': [report.to_dict() for report in reports]}


def aggregate_document(aggregate) -> Dict:
    return {'group': aggregate.group, 'tasks': [str(t) for t in aggregate.tasks],
            'mean': aggregate.mean, 'counts': aggregate.counts}


def contrast_document(contrast) -> Dict:
    return {'group_a': contrast.group_a, 'group_b': contrast.group_b,
            'tasks': [str(t) for t in contrast.tasks], 'values': contrast.values}


ACTIVITY_HEADER = ('mode', 'step', 'fired', 'windowed', 'recounted')


def activity_rows(counts) -> List[List[Any]]:
    rows = []
    for mode in sorted(counts.series):
        series = counts.series[mode]
        for k in range(series.steps.size):
            rows.append([mode, int(series.steps[k]), int(series.fired[k]),
                         int(series.windowed[k]), int(series.recounted[k])])
    return rows


TREND_HEADER = ('group', 'step', 'mean_cosine')


def trend_rows(trend: Dict) -> List[List[Any]]:
    return [[group, step, float(value)]
            for group in sorted(trend) for step, value in trend[group]]


class OutputBundle:
    """Rendered output files held in memory until every input has validated."""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.files: Dict[str, str] = {}
        self.logger = logger or logging.getLogger('gradvac.exporter')

    def add_json(self, name: str, data: Any):
        self.files[name] = render_json(data)

    def add_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
        self.files[name] = render_csv(header, rows)

    def write(self, out_dir: str, overrides: Optional[Dict[str, str]] = None) -> List[Path]:
        """Write every file under out_dir; overrides maps a file name to another path."""
        overrides = overrides or {}
        base = Path(out_dir)
        os.makedirs(base, exist_ok=True)
        written = []
        for name in sorted(self.files):
            path = Path(overrides[name]) if name in overrides else base / name
            os.makedirs(path.parent, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(self.files[name])
            written.append(path)
        self.logger.info(f"Wrote {len(written)} files to {base}")
        return written
