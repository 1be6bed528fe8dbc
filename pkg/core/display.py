# core/display.py

import sys
from typing import Dict, Optional, TextIO


class DisplayManager:
    """Prints command summaries; all output goes to one stream (stdout by default)."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream or sys.stdout

    def _print(self, text: str = ""):
        print(text, file=self.stream)

    def show_run_summary(self, runs: Dict, out_dir: str):
        """Display final losses and firing totals of one or more runs."""
        self._print("\nSimulation Summary")
        self._print("=" * 50)
        for mode, run in runs.items():
            self._print(f"\n{mode}:")
            self._print(f"  Steps: {run.steps}{' (stopped early)' if run.stopped_early else ''}")
            self._print(f"  Final joint loss: {run.final_loss:.6e}")
            self._print(f"  Active updates: {run.fired_total()}")
            if run.lipschitz is not None:
                self._print(f"  Lipschitz constant: {run.lipschitz:.6g}")
                self._print(f"  Max alteration constant a: {run.max_theorem_a:.6g}")
                if run.precondition_violated:
                    self._print("  ! Step size exceeds the descent bound")
        self._print(f"\nOutputs written to {out_dir}")

    def show_combine_summary(self, report, out_dir: str):
        """Display what one combine call did."""
        self._print("\nCombine Summary")
        self._print("=" * 50)
        self._print(f"Step: {report.step}")
        self._print(f"Mode: {report.mode}")
        self._print(f"Eligible pairs: {report.eligible_total}")
        self._print(f"Active updates: {report.fired_total}")
        if report.skipped_total:
            self._print(f"Skipped degenerate pairs: {report.skipped_total}")
        self._print(f"\nOutputs written to {out_dir}")

    def show_analysis_summary(self, similarity, clustering=None, activity=None,
                              out_dir: str = "", pairing=None):
        """Display aggregate, clustering, activity and pairing results."""
        self._print("\nAnalysis Summary")
        self._print("=" * 50)

        if similarity is not None and similarity.success:
            self._print(f"\nAggregated groups ({len(similarity.aggregates)}):")
            for name, aggregate in sorted(similarity.aggregates.items()):
                self._print(f"  {name}: {len(aggregate.tasks)} tasks, "
                            f"{int(aggregate.counts.max(initial=0))} steps")
            if similarity.contrast is not None:
                contrast = similarity.contrast
                self._print(f"  Contrast {contrast.group_a} - {contrast.group_b} computed")

        if clustering is not None:
            if clustering.success:
                score = clustering.score
                self._print("\nClustering:")
                self._print(f"  Within-family mean: {score.within_mean:.6f}")
                self._print(f"  Cross-family mean: {score.cross_mean:.6f}")
                self._print(f"  Margin: {score.margin:.6f}")
            else:
                self._print(f"\nClustering unavailable: {clustering.error_message}")

        if activity is not None and activity.success:
            self._print("\nActive updates:")
            for mode, series in sorted(activity.counts.series.items()):
                flag = "" if series.consistent else "  ! recount mismatch"
                self._print(f"  {mode}: {series.total}{flag}")

        if pairing is not None:
            if pairing.success:
                self._print(f"\nPairing with anchor '{pairing.anchor}' "
                            f"({len(pairing.rows)} partners):")
                self._print(f"  Similarity-quality correlation: {pairing.correlation:.4f}")
            else:
                self._print(f"\nPairing unavailable: {pairing.error_message}")

        if out_dir:
            self._print(f"\nOutputs written to {out_dir}")

    def show_error(self, message: str):
        """Display error message."""
        print(f"\nError: {message}", file=sys.stderr)
