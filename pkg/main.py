# main.py

import argparse
import json
import logging
import os
import platform
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from analyzers.activity_analyzer import ActivityAnalyzer
from analyzers.clustering_analyzer import ClusteringAnalyzer
from analyzers.pairing_analyzer import PairingAnalyzer
from analyzers.similarity_analyzer import SimilarityAnalyzer
from core import exporter
from core.display import DisplayManager
from core.ema import EmaStore
from core.engine import MODES, combine_step
from core.errors import (AnalysisError, ConfigurationError, NumericalError,
                         ValidationError)
from core.rng import StepRNG
from core.scanner import RecordScanner
from planner.dumps import combined_document, load_dump
from planner.experiment import SPEC_VERSION, ExperimentPlanner
from suite.trainer import TrainRun, pairing_sweep, train

__version__ = '0.1.0'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class GradVacUtility:
    """Command coordinator: validate inputs, run, then write outputs."""

    def __init__(self, display: Optional[DisplayManager] = None,
                 planner: Optional[ExperimentPlanner] = None):
        self._setup_logging()
        self.logger = logging.getLogger('gradvac.cli')
        self.display = display or DisplayManager()
        self.planner = planner or ExperimentPlanner()

    def _setup_logging(self):
        """Initialize logging configuration from GRADVAC_LOG."""
        name = os.environ.get('GRADVAC_LOG', 'INFO').upper()
        level = getattr(logging, name, None)
        if not isinstance(level, int):
            level = logging.INFO
        logging.basicConfig(
            level=level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            stream=sys.stderr
        )
        logging.getLogger('gradvac').setLevel(level)

    @staticmethod
    def _versions() -> Dict[str, str]:
        return {'gradvac': __version__, 'numpy': np.__version__,
                'python': platform.python_version()}

    def _run_files(self, outputs: exporter.OutputBundle, prefix: str, run: TrainRun,
                   task_names: List[str]):
        outputs.add_csv(f'{prefix}loss.csv', exporter.loss_header(task_names),
                        exporter.loss_rows(run))
        outputs.add_csv(f'{prefix}similarities.csv', exporter.SIMILARITY_HEADER,
                        exporter.similarity_rows(run.similarity_records))
        outputs.add_json(f'{prefix}surgery_reports.json',
                         exporter.reports_document(run.reports))
        outputs.add_json(f'{prefix}ema.json', run.ema.to_dict())
        if run.snapshots:
            outputs.add_csv(f'{prefix}snapshots.csv',
                            exporter.snapshot_header(run.partition.layout.size),
                            exporter.snapshot_rows(run))

    def handle_simulate(self, config: str, out: str, seed: Optional[int] = None,
                        mode: Optional[str] = None) -> int:
        """Run an experiment file and write its trajectory and records."""
        experiment = self.planner.load_experiment(config, seed, mode)
        problem = experiment.problem
        task_names = [task.name for task in problem.tasks]

        runs = {name: train(problem, experiment.train.with_mode(name))
                for name in experiment.modes}

        description = problem.describe()
        metadata = {
            'spec_version': SPEC_VERSION,
            'config_hash': experiment.config_hash,
            'config': experiment.config,
            'seed': experiment.seed,
            'seeds': experiment.seeds,
            'rng': StepRNG(experiment.train.vaccine.seed).state(),
            'versions': self._versions(),
            'problem': description,
            'tasks': description['tasks'],
            'partition': {'granularity': experiment.train.granularity,
                          'groups': [{'name': g.name, 'length': g.length}
                                     for g in next(iter(runs.values())).partition.groups]},
        }

        outputs = exporter.OutputBundle()
        single = len(runs) == 1
        for name, run in runs.items():
            prefix = '' if single else f'{name}/'
            self._run_files(outputs, prefix, run, task_names)
            if experiment.pairing is not None:
                outcomes = pairing_sweep(problem, experiment.train.with_mode(name),
                                         experiment.pairing['anchor'],
                                         experiment.pairing['partners'])
                outputs.add_csv(f'{prefix}pairing.csv', exporter.PAIRING_HEADER,
                                exporter.pairing_rows(outcomes))
            outputs.add_json(f'{prefix}run_metadata.json', dict(metadata, mode=name, result={
                'steps': run.steps, 'final_loss': run.final_loss,
                'fired_total': run.fired_total(), 'lipschitz': run.lipschitz,
                'max_theorem_a': run.max_theorem_a,
                'precondition_violated': run.precondition_violated,
                'stopped_early': run.stopped_early}))
        if not single:
            outputs.add_csv('comparison.csv', ('mode', 'steps', 'final_loss', 'fired_total'),
                            [[name, run.steps, float(run.final_loss), run.fired_total()]
                             for name, run in runs.items()])
            outputs.add_json('run_metadata.json', dict(metadata, modes=experiment.modes))

        outputs.write(out)
        self.display.show_run_summary(runs, out)
        return EXIT_OK

    def _load_ema(self, ema_in: Optional[str], beta: float, groups: Sequence[str],
                  tasks: Sequence[str]) -> EmaStore:
        if ema_in is None:
            return EmaStore(beta, groups=groups, tasks=tasks)
        try:
            with open(ema_in, 'r', encoding='utf-8') as f:
                snapshot = json.load(f)
        except OSError as e:
            raise ConfigurationError(f"Cannot read EMA snapshot: {e}", ema_in)
        except UnicodeDecodeError as e:
            raise ConfigurationError(f"File is not valid UTF-8: {e.reason} at byte {e.start}",
                                     ema_in)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON: {e.msg}", ema_in, e.lineno)
        try:
            store = EmaStore.from_dict(snapshot)
            store.check_compatible(groups, tasks)
        except ValidationError as e:
            raise ConfigurationError(str(e), ema_in)
        if store.beta != beta:
            self.logger.warning(f"EMA snapshot beta {store.beta!r} differs from configured "
                                f"beta {beta!r}; keeping the snapshot's value")
        if store.groups is None:
            store.groups = list(groups)
        if store.tasks is None:
            store.tasks = list(tasks)
        return store

    def handle_combine(self, dump: str, config: str, out: str, ema_in: Optional[str] = None,
                       ema_out: Optional[str] = None, seed: Optional[int] = None,
                       mode: Optional[str] = None) -> int:
        """Apply surgery to one externally produced step."""
        settings = self.planner.load_combine_config(config, mode, seed)
        gradients = load_dump(dump)
        vaccine = settings.vaccine_config(gradients.task_names)
        ema = self._load_ema(ema_in, vaccine.beta, gradients.partition.names,
                             gradients.task_names)

        result = combine_step(gradients.bundle, gradients.partition, ema, vaccine,
                              StepRNG(vaccine.seed, gradients.step), gradients.task_sizes())

        outputs = exporter.OutputBundle()
        outputs.add_json('combined.json', combined_document(
            gradients.step, gradients.partition, result.combined))
        outputs.add_json('report.json', result.report.to_dict())
        outputs.add_json('ema.json', result.ema.to_dict())
        outputs.write(out, {'ema.json': ema_out} if ema_out else None)
        self.display.show_combine_summary(result.report, out)
        return EXIT_OK

    def _analysis_files(self, outputs: exporter.OutputBundle, prefix: str, records,
                        window: int, contrast: Optional[Sequence[str]],
                        span: Optional[tuple]) -> Dict:
        """Analyze one scanned run and stage its files under prefix."""
        similarity = None
        clustering = None
        if records.similarity_records:
            similarity = SimilarityAnalyzer().analyze(
                records.similarity_records, tuple(contrast) if contrast else None, span)
            if not similarity.success:
                raise AnalysisError(similarity.error_message)
            for name, aggregate in similarity.aggregates.items():
                outputs.add_json(f'{prefix}aggregate_{name}.json',
                                 exporter.aggregate_document(aggregate))
            outputs.add_json(f'{prefix}aggregate.json',
                             exporter.aggregate_document(similarity.pooled))
            if similarity.contrast is not None:
                outputs.add_json(f'{prefix}contrast.json',
                                 exporter.contrast_document(similarity.contrast))
            outputs.add_csv(f'{prefix}layer_trend.csv', exporter.TREND_HEADER,
                            exporter.trend_rows(similarity.trend))

            if records.families is not None:
                clustering = ClusteringAnalyzer().analyze(similarity.pooled, records.families)
                document = {'success': clustering.success, 'error': clustering.error_message,
                            'families': {str(t): f for t, f in records.families.items()}}
                if clustering.success:
                    document.update(clustering.score.to_dict())
                outputs.add_json(f'{prefix}clustering.json', document)

        activity = None
        if records.reports:
            activity = ActivityAnalyzer().analyze(records.reports, window)
            if not activity.success:
                raise AnalysisError(activity.error_message)
            outputs.add_csv(f'{prefix}activity.csv', exporter.ACTIVITY_HEADER,
                            exporter.activity_rows(activity.counts))

        pairing = None
        if records.pairing:
            pairing = PairingAnalyzer().analyze(records.pairing)
            outputs.add_json(f'{prefix}pairing.json', pairing.to_dict())

        return {'similarity': similarity, 'clustering': clustering,
                'activity': activity, 'pairing': pairing}

    def handle_analyze(self, records_dir: str, out: str, window: int = 10,
                       contrast: Optional[Sequence[str]] = None,
                       step_range: Optional[Sequence[int]] = None) -> int:
        """Aggregate, contrast, cluster and count a recorded run.

        A multi-mode simulate directory is analyzed one mode subdirectory at
        a time, each into the matching subdirectory of out.
        """
        if window < 1:
            raise AnalysisError(f"--window must be >= 1, got {window}")
        span = tuple(step_range) if step_range else None
        records = RecordScanner(records_dir).scan()
        if not records.success:
            raise AnalysisError(records.error_message)

        runs = {'': records}
        if records.modes is not None:
            runs = {}
            for mode in records.modes:
                scanned = RecordScanner(os.path.join(records_dir, mode)).scan()
                if not scanned.success:
                    raise AnalysisError(f"Mode '{mode}': {scanned.error_message}")
                runs[f'{mode}/'] = scanned

        outputs = exporter.OutputBundle()
        results = {prefix: self._analysis_files(outputs, prefix, scanned, window, contrast, span)
                   for prefix, scanned in runs.items()}

        outputs.write(out)
        for prefix, result in results.items():
            self.display.show_analysis_summary(
                result['similarity'], result['clustering'], result['activity'],
                os.path.join(out, prefix) if prefix else out, result['pairing'])
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='gradvac',
                                     description='Multi-task gradient surgery toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Run a synthetic experiment')
    simulate.add_argument('--config', required=True, help='Experiment file (JSON or YAML)')
    simulate.add_argument('--out', required=True, help='Output directory')
    simulate.add_argument('--seed', type=int, help='Override the experiment seed')
    simulate.add_argument('--mode', choices=MODES, help='Run this mode only')

    combine = commands.add_parser('combine', help='Combine one gradient dump')
    combine.add_argument('--dump', required=True, help='Gradient dump file')
    combine.add_argument('--config', required=True, help='Combine configuration file')
    combine.add_argument('--out', required=True, help='Output directory')
    combine.add_argument('--ema-in', help='EMA snapshot to start from')
    combine.add_argument('--ema-out', help='Where to write the updated EMA snapshot')
    combine.add_argument('--seed', type=int, help='Override the configured seed')
    combine.add_argument('--mode', choices=MODES, help='Override the configured mode')

    analyze = commands.add_parser('analyze', help='Analyze a simulate output directory')
    analyze.add_argument('--records', required=True, help='Directory written by simulate')
    analyze.add_argument('--out', required=True, help='Output directory')
    analyze.add_argument('--window', type=int, default=10, help='Activity window width')
    analyze.add_argument('--contrast', nargs=2, metavar=('GROUP_A', 'GROUP_B'),
                         help='Report mean(GROUP_A) - mean(GROUP_B)')
    analyze.add_argument('--step-range', nargs=2, type=int, metavar=('START', 'STOP'),
                         help='Only use steps in [START, STOP]')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        utility = GradVacUtility()
        if args.command == 'simulate':
            return utility.handle_simulate(args.config, args.out, args.seed, args.mode)
        if args.command == 'combine':
            return utility.handle_combine(args.dump, args.config, args.out, args.ema_in,
                                          args.ema_out, args.seed, args.mode)
        return utility.handle_analyze(args.records, args.out, args.window,
                                      args.contrast, args.step_range)
    except ValidationError as e:
        logging.error(f"Validation failed: {e}")
        DisplayManager().show_error(str(e))
        return EXIT_VALIDATION
    except NumericalError as e:
        logging.error(f"Numerical failure: {e}")
        DisplayManager().show_error(str(e))
        return EXIT_NUMERICAL
    except Exception as e:
        logging.error("Fatal error", exc_info=True)
        DisplayManager().show_error(f"Fatal error: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
