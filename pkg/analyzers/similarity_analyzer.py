# analyzers/similarity_analyzer.py

"""Pairwise gradient cosine measurements and their aggregation over steps."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.engine import GradientBundle
from core.errors import AnalysisError
from core.geometry import NORM_TOLERANCE, cosine
from core.partition import GroupPartition, TaskId
from .base import BaseAnalysis, BaseAnalyzer


@dataclass
class SimilarityRecord:
    """Per-group symmetric cosine matrices over the tasks present at one step.

    Missing cells (degenerate gradients) hold NaN.
    """
    step: int
    tasks: List[TaskId]
    matrices: Dict[str, np.ndarray]

    def value(self, group: str, i: TaskId, j: TaskId) -> float:
        index = {task: k for k, task in enumerate(self.tasks)}
        return float(self.matrices[group][index[i], index[j]])


@dataclass
class AggregateMatrix:
    """Per-cell means over steps where the pair was measured."""
    tasks: List[TaskId]
    mean: np.ndarray
    counts: np.ndarray
    group: Optional[str] = None

    @property
    def off_diagonal(self) -> np.ndarray:
        return ~np.eye(len(self.tasks), dtype=bool)


@dataclass
class ContrastMatrix:
    tasks: List[TaskId]
    values: np.ndarray
    group_a: str
    group_b: str


def record_similarities(bundle: GradientBundle, partition: GroupPartition,
                        norm_tolerance: float = NORM_TOLERANCE) -> SimilarityRecord:
    """Cosine matrices of the raw gradients; never mutates the bundle."""
    bundle.validate(partition)
    tasks = bundle.tasks
    n = len(tasks)
    matrices = {}
    for name in partition.names:
        matrix = np.full((n, n), np.nan)
        for a in range(n):
            for b in range(a, n):
                result = cosine(bundle.per_task[tasks[a]][name],
                                bundle.per_task[tasks[b]][name], norm_tolerance)
                if result.degenerate:
                    continue
                value = 1.0 if a == b else result.value
                matrix[a, b] = matrix[b, a] = value
        matrices[name] = matrix
    return SimilarityRecord(bundle.step, tasks, matrices)


def aggregate_over_steps(records: Sequence[SimilarityRecord], group: Optional[str] = None,
                         step_range: Optional[Tuple[int, int]] = None) -> AggregateMatrix:
    """Cell-wise mean over steps; group=None pools every group."""
    selected = BaseAnalyzer.select_steps(records, step_range)
    if not selected:
        raise AnalysisError("No similarity records to aggregate")
    if group is not None and not any(group in r.matrices for r in selected):
        raise AnalysisError(f"Group '{group}' not present in any record")

    tasks = sorted(set().union(*(r.tasks for r in selected)))
    position = {task: k for k, task in enumerate(tasks)}
    total = np.zeros((len(tasks), len(tasks)))
    counts = np.zeros((len(tasks), len(tasks)), dtype=np.int64)

    for record in selected:
        cells = np.ix_(*[[position[t] for t in record.tasks]] * 2)
        names = [group] if group is not None else sorted(record.matrices)
        for name in names:
            matrix = record.matrices.get(name)
            if matrix is None:
                continue
            present = ~np.isnan(matrix)
            total[cells] += np.where(present, matrix, 0.0)
            counts[cells] += present

    mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return AggregateMatrix(tasks, mean, counts, group)


def group_contrast(records: Sequence[SimilarityRecord], group_a: str, group_b: str,
                   step_range: Optional[Tuple[int, int]] = None) -> ContrastMatrix:
    """mean(group_a) - mean(group_b), cell by cell."""
    first = aggregate_over_steps(records, group_a, step_range)
    second = aggregate_over_steps(records, group_b, step_range)
    if first.tasks != second.tasks:
        raise AnalysisError(f"Groups '{group_a}' and '{group_b}' cover different tasks")
    return ContrastMatrix(first.tasks, first.mean - second.mean, group_a, group_b)


def layer_trend(records: Sequence[SimilarityRecord]) -> Dict[str, List[Tuple[int, float]]]:
    """Mean off-diagonal cosine per group per step, for per-layer comparisons."""
    trend: Dict[str, List[Tuple[int, float]]] = {}
    for record in records:
        mask = ~np.eye(len(record.tasks), dtype=bool)
        for name in sorted(record.matrices):
            cells = record.matrices[name][mask]
            cells = cells[~np.isnan(cells)]
            if cells.size:
                trend.setdefault(name, []).append((record.step, float(cells.mean())))
    return trend


@dataclass
class SimilarityAnalysis(BaseAnalysis):
    """Aggregates, optional contrast and per-layer trend for one trajectory."""
    aggregates: Dict[str, AggregateMatrix] = field(default_factory=dict)
    pooled: Optional[AggregateMatrix] = None
    contrast: Optional[ContrastMatrix] = None
    trend: Dict[str, List[Tuple[int, float]]] = field(default_factory=dict)


class SimilarityAnalyzer(BaseAnalyzer):
    """Runs the similarity measurements over a recorded trajectory."""

    def analyze(self, records: Sequence[SimilarityRecord],
                contrast: Optional[Tuple[str, str]] = None,
                step_range: Optional[Tuple[int, int]] = None) -> SimilarityAnalysis:
        analysis = SimilarityAnalysis(label='similarity', success=True)
        if not records:
            return analysis.fail("No similarity records")

        groups = sorted(set().union(*(r.matrices.keys() for r in records)))
        for name in groups:
            aggregate, error = self.safe_call(f"aggregate '{name}'", aggregate_over_steps,
                                              records, name, step_range)
            if error:
                return analysis.fail(error)
            analysis.aggregates[name] = aggregate

        pooled, error = self.safe_call("pooled aggregate", aggregate_over_steps,
                                       records, None, step_range)
        if error:
            return analysis.fail(error)
        analysis.pooled = pooled

        if contrast is not None:
            result, error = self.safe_call("group contrast", group_contrast,
                                           records, contrast[0], contrast[1], step_range)
            if error:
                return analysis.fail(error)
            analysis.contrast = result

        analysis.trend = layer_trend(BaseAnalyzer.select_steps(records, step_range))
        self.logger.info(f"Aggregated {len(records)} records over {len(groups)} groups")
        return analysis
