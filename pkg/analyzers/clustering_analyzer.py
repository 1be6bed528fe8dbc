# analyzers/clustering_analyzer.py

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from core.errors import AnalysisError
from core.partition import TaskId
from .base import BaseAnalysis, BaseAnalyzer
from .similarity_analyzer import AggregateMatrix


@dataclass(frozen=True)
class ClusteringScore:
    """Within-family versus cross-family mean cosine."""
    within_mean: float
    cross_mean: float
    margin: float
    within_count: int
    cross_count: int

    def to_dict(self) -> Dict:
        return {'within_mean': self.within_mean, 'cross_mean': self.cross_mean,
                'margin': self.margin, 'within_count': self.within_count,
                'cross_count': self.cross_count}


def clustering_score(aggregate: AggregateMatrix,
                     family_assignment: Mapping[TaskId, str]) -> ClusteringScore:
    """Compare mean off-diagonal cosine inside families against across them.

    Missing cells are ignored. Only the family partition matters, so the
    score does not depend on family labels or task order.
    """
    unassigned = [str(t) for t in aggregate.tasks if t not in family_assignment]
    if unassigned:
        raise AnalysisError(f"Tasks without a family: {unassigned}")

    labels = np.array([family_assignment[t] for t in aggregate.tasks], dtype=object)
    same = labels[:, None] == labels[None, :]
    measured = aggregate.off_diagonal & ~np.isnan(aggregate.mean)

    if not np.any(same & aggregate.off_diagonal):
        raise AnalysisError("Every family has a single task; no within-family pairs")
    within = aggregate.mean[same & measured]
    cross = aggregate.mean[~same & measured]
    if within.size == 0:
        raise AnalysisError("No measured within-family cells")
    if cross.size == 0:
        raise AnalysisError("No measured cross-family cells")

    within_mean = float(within.mean())
    cross_mean = float(cross.mean())
    return ClusteringScore(within_mean, cross_mean, within_mean - cross_mean,
                           int(within.size), int(cross.size))


@dataclass
class ClusteringAnalysis(BaseAnalysis):
    score: Optional[ClusteringScore] = None
    group: Optional[str] = None


class ClusteringAnalyzer(BaseAnalyzer):
    """Scores family clustering of an aggregate similarity matrix."""

    def analyze(self, aggregate: AggregateMatrix,
                family_assignment: Mapping[TaskId, str]) -> ClusteringAnalysis:
        analysis = ClusteringAnalysis(label='clustering', success=True, group=aggregate.group)
        score, error = self.safe_call("clustering score", clustering_score,
                                      aggregate, family_assignment)
        if error:
            return analysis.fail(error)

        analysis.score = score
        self.logger.info(f"Clustering margin {score.margin:.6f} "
                         f"(within {score.within_mean:.6f}, cross {score.cross_mean:.6f})")
        return analysis
