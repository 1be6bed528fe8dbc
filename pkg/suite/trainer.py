# suite/trainer.py

"""Deterministic gradient-descent loop over a synthetic problem."""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from analyzers.similarity_analyzer import SimilarityRecord, record_similarities
from core.ema import EmaStore
from core.engine import MODES, SurgeryReport, VaccineConfig, combine_step
from core.errors import ConfigurationError, DivergenceError, NumericalError
from core.geometry import GradVector, bound_target, cosine, theorem_a
from core.partition import GRANULARITIES, GroupPartition, build_partition
from core.rng import StepRNG
from core.sampler import SamplerConfig, TaskSampler
from .problems import QuadraticProblem, SyntheticProblem, task_gradients

DEFAULT_DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class TrainConfig:
    """Step size, step count and recording options of one run."""
    step_size: float
    max_steps: int
    vaccine: VaccineConfig = field(default_factory=VaccineConfig)
    granularity: str = 'whole_model'
    sampler: Optional[SamplerConfig] = None
    batch_tasks: Optional[int] = None
    record_every: int = 1
    record_similarities: bool = True
    keep_snapshots: bool = False
    divergence_threshold: float = DEFAULT_DIVERGENCE_THRESHOLD
    grad_tolerance: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigurationError(f"step_size must be positive, got {self.step_size!r}")
        if not isinstance(self.max_steps, int) or self.max_steps < 0:
            raise ConfigurationError(f"max_steps must be a non-negative integer, "
                                     f"got {self.max_steps!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigurationError(
                f"Unknown granularity '{self.granularity}', expected one of {GRANULARITIES}")
        if self.record_every < 1:
            raise ConfigurationError(f"record_every must be >= 1, got {self.record_every}")
        if self.sampler is not None and (self.batch_tasks is None or self.batch_tasks < 1):
            raise ConfigurationError("Sampling requires batch_tasks >= 1")
        if self.grad_tolerance < 0:
            raise ConfigurationError("grad_tolerance must be >= 0")

    def with_mode(self, mode: str) -> 'TrainConfig':
        return replace(self, vaccine=self.vaccine.with_overrides(mode=mode))


@dataclass
class TrainRun:
    """Trajectory of one run.

    joint_losses and task_losses hold one entry per visited point (initial
    point included); the per-step series hold one entry per applied update.
    theorem_a[k] is the largest alteration constant over the updates that
    fired at step k, 0 when nothing fired. distinct_tasks[k] counts the
    different tasks in the step-k minibatch.
    """
    problem: str
    config: TrainConfig
    partition: GroupPartition
    joint_losses: List[float] = field(default_factory=list)
    task_losses: List[np.ndarray] = field(default_factory=list)
    grad_norms_sq: List[float] = field(default_factory=list)
    theorem_a: List[float] = field(default_factory=list)
    distinct_tasks: List[int] = field(default_factory=list)
    similarity_records: List[SimilarityRecord] = field(default_factory=list)
    reports: List[SurgeryReport] = field(default_factory=list)
    snapshots: List[np.ndarray] = field(default_factory=list)
    final_theta: Optional[np.ndarray] = None
    ema: Optional[EmaStore] = None
    lipschitz: Optional[float] = None
    precondition_violated: bool = False
    stopped_early: bool = False

    @property
    def steps(self) -> int:
        return len(self.reports)

    @property
    def final_loss(self) -> float:
        return self.joint_losses[-1]

    @property
    def max_theorem_a(self) -> float:
        return max(self.theorem_a, default=0.0)

    def fired_total(self) -> int:
        return sum(report.fired_total for report in self.reports)

    def check_consistency(self):
        """Raise NumericalError if the trajectory series disagree or hold non-finite losses."""
        steps = self.steps
        lengths = {'joint_losses': len(self.joint_losses) - 1,
                   'task_losses': len(self.task_losses) - 1,
                   'grad_norms_sq': len(self.grad_norms_sq),
                   'theorem_a': len(self.theorem_a),
                   'distinct_tasks': len(self.distinct_tasks)}
        if self.config.keep_snapshots:
            lengths['snapshots'] = len(self.snapshots) - 1
        for name, length in lengths.items():
            if length != steps:
                raise NumericalError(f"Trajectory series '{name}' covers {length} steps, "
                                     f"reports cover {steps}")
        if not all(math.isfinite(loss) for loss in self.joint_losses):
            raise NumericalError("Trajectory contains non-finite joint losses")
        if not all(np.all(np.isfinite(losses)) for losses in self.task_losses):
            raise NumericalError("Trajectory contains non-finite task losses")


def step_size_bound(lipschitz: float, a: float) -> float:
    """Largest step size covered by the convex descent guarantee (exclusive)."""
    if not lipschitz > 0:
        raise ConfigurationError(f"Lipschitz constant must be positive, got {lipschitz!r}")
    return min(2.0 / (lipschitz * (1.0 + a * a)), 1.0 / lipschitz)


def descent_violations(run: TrainRun, lipschitz: float, slack: float = 1e-12) -> List[int]:
    """Steps where L(next) > L(now) - (t - (1 + a^2) L t^2 / 2) ||g||^2.

    slack is relative to max(1, |L(now)|).
    """
    t = run.config.step_size
    violations = []
    for k, (norm_sq, a) in enumerate(zip(run.grad_norms_sq, run.theorem_a)):
        before = run.joint_losses[k]
        decrease = (t - (1.0 + a * a) * lipschitz * t * t / 2.0) * norm_sq
        if run.joint_losses[k + 1] > before - decrease + slack * max(1.0, abs(before)):
            violations.append(k)
    return violations


def _step_theorem_a(report: SurgeryReport, clamp: float) -> float:
    values = [theorem_a(entry.observed_phi, bound_target(entry.ema_before, clamp))
              for entry in report.entries if entry.fired]
    return max(values, default=0.0)


def train(problem: SyntheticProblem, cfg: TrainConfig,
          logger: Optional[logging.Logger] = None) -> TrainRun:
    """Iterate theta <- theta - t * combined gradient for cfg.max_steps steps.

    Runs are bit-for-bit reproducible from the configured seeds.
    """
    logger = logger or logging.getLogger('gradvac.trainer')
    partition = build_partition(problem.layout, cfg.granularity)
    vaccine = cfg.vaccine

    sampler = None
    if cfg.sampler is not None:
        if set(cfg.sampler.tasks) != set(problem.tasks):
            raise ConfigurationError("Sampler tasks do not match the problem's tasks")
        sampler = TaskSampler(cfg.sampler)

    theta = problem.initial_point()
    ema = EmaStore(vaccine.beta, groups=partition.names,
                   tasks=[task.name for task in problem.tasks])
    rng = StepRNG(vaccine.seed)
    run = TrainRun(problem.name, cfg, partition, ema=ema,
                   lipschitz=problem.lipschitz_constant())

    run.joint_losses.append(problem.joint_loss(theta))
    run.task_losses.append(problem.task_losses(theta))
    if cfg.keep_snapshots:
        run.snapshots.append(theta.copy())
    logger.info(f"Training '{problem.name}' with {vaccine.mode} at {cfg.granularity} "
                f"granularity: {cfg.max_steps} steps, step size {cfg.step_size!r}")

    for step in range(cfg.max_steps):
        tasks, multiplicities = None, None
        distinct = len(problem.tasks)
        if sampler is not None:
            draw = sampler.draw(cfg.batch_tasks)
            tasks, multiplicities = sorted(draw), draw
            distinct = TaskSampler.effective_batch(draw)
            logger.debug(f"Step {step}: sampled {cfg.batch_tasks} tasks, {distinct} distinct")
        bundle = task_gradients(problem, theta, partition, step, tasks, multiplicities)

        raw = partition.assemble({
            name: np.sum([bundle.per_task[t][name].values for t in bundle.tasks], axis=0)
            for name in partition.names})
        norm_sq = float(raw @ raw)
        if cfg.grad_tolerance > 0 and math.sqrt(norm_sq) < cfg.grad_tolerance:
            logger.info(f"Gradient norm below {cfg.grad_tolerance!r} at step {step}; stopping")
            run.stopped_early = True
            break

        if cfg.record_similarities and step % cfg.record_every == 0:
            run.similarity_records.append(
                record_similarities(bundle, partition, vaccine.norm_tolerance))

        result = combine_step(bundle, partition, ema, vaccine, rng, problem.task_sizes)
        rng = result.rng
        update = partition.assemble({name: v.values for name, v in result.combined.items()})
        theta = theta - cfg.step_size * update

        loss = problem.joint_loss(theta)
        if not math.isfinite(loss) or loss > cfg.divergence_threshold:
            logger.error(f"Divergence at step {step + 1}: joint loss {loss!r}")
            raise DivergenceError(step + 1, loss, cfg.divergence_threshold)

        run.grad_norms_sq.append(norm_sq)
        run.theorem_a.append(_step_theorem_a(result.report, vaccine.target_clamp))
        run.distinct_tasks.append(distinct)
        run.reports.append(result.report)
        run.joint_losses.append(loss)
        run.task_losses.append(problem.task_losses(theta))
        if cfg.keep_snapshots:
            run.snapshots.append(theta.copy())

    run.final_theta = theta
    if run.lipschitz is not None and run.steps:
        bound = step_size_bound(run.lipschitz, run.max_theorem_a)
        run.precondition_violated = cfg.step_size >= bound
        if run.precondition_violated:
            logger.warning(f"Step size {cfg.step_size!r} is not below the descent bound "
                           f"{bound!r} (L={run.lipschitz!r}, max a={run.max_theorem_a!r})")

    run.check_consistency()
    logger.info(f"Finished after {run.steps} steps: joint loss {run.final_loss!r}, "
                f"{run.fired_total()} firings")
    return run


def compare_modes(problem: SyntheticProblem, cfg: TrainConfig,
                  modes: Sequence[str] = ('sum_baseline', 'pcgrad', 'gradvac'),
                  ) -> Dict[str, TrainRun]:
    """Run the same problem and config once per mode, sequentially."""
    unknown = [mode for mode in modes if mode not in MODES]
    if unknown:
        raise ConfigurationError(f"Unknown modes {unknown}, expected a subset of {MODES}")
    return {mode: train(problem, cfg.with_mode(mode)) for mode in modes}


@dataclass(frozen=True)
class PairingOutcome:
    """The anchor task trained jointly with one partner."""
    anchor: str
    partner: str
    mean_cosine: float
    anchor_loss: float
    steps: int


def pairing_sweep(problem: QuadraticProblem, cfg: TrainConfig, anchor: str,
                  partners: Optional[Sequence[str]] = None,
                  logger: Optional[logging.Logger] = None) -> List[PairingOutcome]:
    """Train the anchor in a two-task run with each partner in turn.

    mean_cosine averages the cosine of the two raw whole-model gradients
    over the points where an update was computed; anchor_loss is the
    anchor's own loss where the run ends. Partners default to every other
    task of the problem.
    """
    logger = logger or logging.getLogger('gradvac.trainer')
    if not isinstance(problem, QuadraticProblem):
        raise ConfigurationError(f"Pairing runs need a quadratic problem, "
                                 f"got '{problem.name}'")
    names = [task.name for task in problem.tasks]
    if anchor not in names:
        raise ConfigurationError(f"Unknown pairing anchor '{anchor}'")
    partners = [n for n in names if n != anchor] if partners is None else list(partners)
    if not partners:
        raise ConfigurationError("Pairing needs at least one partner")
    if anchor in partners:
        raise ConfigurationError(f"Anchor '{anchor}' cannot be its own partner")

    pair_cfg = replace(cfg, sampler=None, batch_tasks=None, keep_snapshots=True,
                       record_similarities=False,
                       vaccine=cfg.vaccine.with_overrides(task_subset='all_task',
                                                          subset_tasks=()))
    tolerance = cfg.vaccine.norm_tolerance
    outcomes = []
    for partner in partners:
        pair = problem.restrict([anchor, partner], name=f'{anchor}+{partner}')
        run = train(pair, pair_cfg, logger)
        values = []
        for theta in run.snapshots[:-1]:
            similarity = cosine(GradVector(pair.task_gradient(0, theta)),
                                GradVector(pair.task_gradient(1, theta)), tolerance)
            if not similarity.degenerate:
                values.append(similarity.value)
        mean = float(np.mean(values)) if values else math.nan
        outcome = PairingOutcome(anchor, partner, mean, float(run.task_losses[-1][0]),
                                 run.steps)
        logger.info(f"Paired '{anchor}' with '{partner}': mean cosine {mean:.6f}, "
                    f"anchor loss {outcome.anchor_loss!r}")
        outcomes.append(outcome)
    return outcomes
