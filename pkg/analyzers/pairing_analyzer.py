# analyzers/pairing_analyzer.py

"""Does a partner that shares gradient direction with the anchor help it more?"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.errors import AnalysisError
from .base import BaseAnalysis, BaseAnalyzer


@dataclass(frozen=True)
class PairingRow:
    anchor: str
    partner: str
    mean_cosine: float
    anchor_loss: float
    steps: int


def similarity_quality_correlation(cosines: Sequence[float],
                                   anchor_losses: Sequence[float]) -> float:
    """Pearson correlation between mean cosine and anchor quality (negated loss).

    Rows with a NaN cosine are dropped.
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    quality = -np.asarray(anchor_losses, dtype=np.float64)
    if cosines.shape != quality.shape:
        raise AnalysisError(f"{cosines.size} cosines for {quality.size} losses")
    kept = np.isfinite(cosines) & np.isfinite(quality)
    if np.count_nonzero(kept) < 2:
        raise AnalysisError("Correlation needs at least two measured partners")
    cosines, quality = cosines[kept], quality[kept]
    if np.ptp(cosines) == 0.0 or np.ptp(quality) == 0.0:
        raise AnalysisError("Correlation is undefined when cosine or loss is constant")
    return float(np.corrcoef(cosines, quality)[0, 1])


@dataclass
class PairingAnalysis(BaseAnalysis):
    anchor: Optional[str] = None
    rows: List[PairingRow] = field(default_factory=list)
    correlation: Optional[float] = None

    def to_dict(self) -> Dict:
        return {'success': self.success, 'error': self.error_message,
                'anchor': self.anchor, 'correlation': self.correlation,
                'partners': [{'partner': r.partner, 'mean_cosine': r.mean_cosine,
                              'anchor_loss': r.anchor_loss, 'steps': r.steps}
                             for r in self.rows]}


class PairingAnalyzer(BaseAnalyzer):
    """Correlates anchor-partner gradient similarity with the anchor's final loss."""

    def analyze(self, rows: Sequence[PairingRow]) -> PairingAnalysis:
        rows = sorted(rows, key=lambda r: r.partner)
        anchors = {r.anchor for r in rows}
        analysis = PairingAnalysis(label='pairing', success=True, rows=list(rows),
                                   anchor=next(iter(anchors)) if len(anchors) == 1 else None)
        if len(anchors) > 1:
            return analysis.fail(f"Pairing rows mix anchors {sorted(anchors)}")

        correlation, error = self.safe_call(
            "pairing correlation", similarity_quality_correlation,
            [r.mean_cosine for r in rows], [r.anchor_loss for r in rows])
        if error:
            return analysis.fail(error)

        analysis.correlation = correlation
        self.logger.info(f"Anchor '{analysis.anchor}': similarity-quality correlation "
                         f"{correlation:.4f} over {len(rows)} partners")
        return analysis
