# analyzers/activity_analyzer.py

"""Counts of active surgery updates per step, as exact and windowed series."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.engine import SurgeryReport
from core.errors import AnalysisError
from .base import BaseAnalysis, BaseAnalyzer


@dataclass
class ActivitySeries:
    """Fired counts of one mode; windowed[k] sums the last `window` reports up to k."""
    mode: str
    steps: np.ndarray
    fired: np.ndarray
    windowed: np.ndarray
    recounted: np.ndarray

    @property
    def total(self) -> int:
        return int(self.fired.sum())

    @property
    def consistent(self) -> bool:
        return bool(np.array_equal(self.fired, self.recounted))


@dataclass
class ActivityCounts:
    window: int
    series: Dict[str, ActivitySeries] = field(default_factory=dict)


def _trailing_sum(values: np.ndarray, window: int) -> np.ndarray:
    return np.convolve(values, np.ones(window, dtype=np.int64))[:values.size]


def activity_counts(reports: Sequence[SurgeryReport], window: int) -> ActivityCounts:
    """Per-mode fired counts in step order plus trailing-window sums."""
    if not isinstance(window, int) or window < 1:
        raise AnalysisError(f"Activity window must be a positive integer, got {window!r}")

    by_mode: Dict[str, List[SurgeryReport]] = {}
    for report in reports:
        by_mode.setdefault(report.mode, []).append(report)

    counts = ActivityCounts(window)
    for mode in sorted(by_mode):
        ordered = by_mode[mode]
        steps = np.array([r.step for r in ordered], dtype=np.int64)
        if np.any(np.diff(steps) <= 0):
            raise AnalysisError(f"Reports for mode '{mode}' are not in increasing step order")
        fired = np.array([r.fired_total for r in ordered], dtype=np.int64)
        recounted = np.array([r.recount_fired() for r in ordered], dtype=np.int64)
        counts.series[mode] = ActivitySeries(mode, steps, fired,
                                             _trailing_sum(fired, window), recounted)
    return counts


@dataclass
class ActivityAnalysis(BaseAnalysis):
    counts: Optional[ActivityCounts] = None
    inconsistent_steps: Dict[str, List[int]] = field(default_factory=dict)


class ActivityAnalyzer(BaseAnalyzer):
    """Counts firings and cross-checks them against the firing predicate."""

    def analyze(self, reports: Sequence[SurgeryReport], window: int = 10) -> ActivityAnalysis:
        analysis = ActivityAnalysis(label='activity', success=True)
        counts, error = self.safe_call("activity counts", activity_counts, reports, window)
        if error:
            return analysis.fail(error)

        analysis.counts = counts
        for mode, series in counts.series.items():
            mismatched = series.steps[series.fired != series.recounted]
            if mismatched.size:
                analysis.inconsistent_steps[mode] = [int(s) for s in mismatched]
                self.logger.warning(f"Mode '{mode}': fired counts disagree with the "
                                    f"predicate recount at {mismatched.size} steps")
            self.logger.info(f"Mode '{mode}': {series.total} firings over "
                             f"{series.steps.size} steps")
        return analysis
