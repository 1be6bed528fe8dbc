# core/engine.py

"""Per-group gradient surgery over a task minibatch."""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np

from .ema import EmaStore, ema_closed_form
from .errors import ConfigurationError, DimensionError, ValidationError
from .geometry import (NORM_TOLERANCE, TARGET_CLAMP, GradVector, bound_target, cosine,
                       pcgrad_project, rescale_to_norm, vaccine_align)
from .partition import GroupPartition, TaskId
from .rng import StepRNG

MODES = ('gradvac', 'pcgrad', 'fixed_target', 'sum_baseline')
TASK_SUBSETS = ('all_task', 'explicit', 'hrl_only', 'lrl_only')
REFERENCES = ('original', 'working')

# Task size at or above which a task counts as high-resource.
DEFAULT_RESOURCE_THRESHOLD = 1e7

__all__ = [
    'MODES', 'TASK_SUBSETS', 'REFERENCES', 'VaccineConfig', 'GradientBundle',
    'SurgeryEntry', 'SurgeryReport', 'CombineResult', 'combine_step',
    'resolve_task_subset', 'ema_closed_form',
]


@dataclass(frozen=True)
class VaccineConfig:
    """Surgery settings: algorithm mode, task subset, EMA decay and tolerances."""
    mode: str = 'gradvac'
    fixed_target: Optional[float] = None
    task_subset: str = 'all_task'
    subset_tasks: Tuple[int, ...] = ()
    resource_threshold: float = DEFAULT_RESOURCE_THRESHOLD
    beta: float = 1e-2
    seed: int = 0
    preserve_norm: bool = False
    norm_tolerance: float = NORM_TOLERANCE
    target_clamp: float = TARGET_CLAMP
    update_ema: bool = True
    reference: str = 'original'

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        if self.task_subset not in TASK_SUBSETS:
            raise ConfigurationError(
                f"Unknown task subset '{self.task_subset}', expected one of {TASK_SUBSETS}")
        if self.reference not in REFERENCES:
            raise ConfigurationError(
                f"Unknown reference '{self.reference}', expected one of {REFERENCES}")
        if not (0.0 < self.beta <= 1.0):
            raise ConfigurationError(f"beta must lie in (0, 1], got {self.beta!r}")
        if not (0.0 < self.target_clamp < 1.0):
            raise ConfigurationError(
                f"target_clamp must lie in (0, 1), got {self.target_clamp!r}")
        if not (self.norm_tolerance > 0.0):
            raise ConfigurationError(
                f"norm_tolerance must be positive, got {self.norm_tolerance!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.mode == 'fixed_target':
            if self.fixed_target is None or not math.isfinite(self.fixed_target):
                raise ConfigurationError("fixed_target mode requires a finite fixed_target")
            if abs(self.fixed_target) > self.target_clamp:
                raise ConfigurationError(
                    f"fixed_target {self.fixed_target!r} outside "
                    f"[-{self.target_clamp}, {self.target_clamp}]")
        if self.task_subset == 'explicit' and not self.subset_tasks:
            raise ConfigurationError("explicit task subset requires subset_tasks")

    def with_overrides(self, **changes) -> 'VaccineConfig':
        return replace(self, **changes)


@dataclass
class GradientBundle:
    """Per-task, per-group gradients for one step."""
    step: int
    per_task: Dict[TaskId, Dict[str, GradVector]]

    @property
    def tasks(self) -> List[TaskId]:
        return sorted(self.per_task)

    @classmethod
    def from_arrays(cls, step: int,
                    arrays: Mapping[TaskId, Mapping[str, np.ndarray]]) -> 'GradientBundle':
        return cls(step, {task: {name: GradVector(values, name)
                                 for name, values in groups.items()}
                          for task, groups in arrays.items()})

    def validate(self, partition: GroupPartition):
        """Check the bundle against the partition without touching anything."""
        if self.step < 0:
            raise ValidationError(f"Bundle step must be non-negative, got {self.step}")
        if not self.per_task:
            raise ValidationError("Gradient bundle has no tasks")
        expected = partition.lengths()
        for task, groups in self.per_task.items():
            if set(groups) != set(expected):
                raise ValidationError(
                    f"Task '{task}' provides groups {sorted(groups)}, "
                    f"partition declares {sorted(expected)}")
            for name, vector in groups.items():
                if len(vector) != expected[name]:
                    raise DimensionError(
                        f"Task '{task}' group '{name}' has length {len(vector)}, "
                        f"expected {expected[name]}")


@dataclass(frozen=True)
class SurgeryEntry:
    """One evaluated (i, j, group) pair.

    ema_before holds the unclamped target: the stored EMA value in gradvac
    mode, 0 in pcgrad mode, the fixed value otherwise. The pair fires when
    observed_phi is below that target clipped to the report's target_clamp;
    clamped is set when the clip changed it.
    """
    i: int
    j: int
    group: str
    observed_phi: float
    ema_before: float
    fired: bool
    mode_applied: str
    skipped: bool = False
    clamped: bool = False

    def to_dict(self) -> Dict:
        return {'i': self.i, 'j': self.j, 'group': self.group,
                'observed_phi': self.observed_phi, 'ema_before': self.ema_before,
                'fired': self.fired, 'mode_applied': self.mode_applied,
                'skipped': self.skipped, 'clamped': self.clamped}

    @classmethod
    def from_dict(cls, data: Dict) -> 'SurgeryEntry':
        return cls(int(data['i']), int(data['j']), str(data['group']),
                   float(data['observed_phi']), float(data['ema_before']),
                   bool(data['fired']), str(data['mode_applied']),
                   bool(data.get('skipped', False)), bool(data.get('clamped', False)))


@dataclass
class SurgeryReport:
    """Everything the engine did during one step."""
    step: int
    mode: str
    entries: List[SurgeryEntry] = field(default_factory=list)
    fired_total: int = 0
    eligible_total: int = 0
    target_clamp: float = TARGET_CLAMP

    def recount_fired(self) -> int:
        """Count entries that satisfy the firing predicate of their mode."""
        return sum(1 for e in self.entries
                   if not e.skipped
                   and e.observed_phi < bound_target(e.ema_before, self.target_clamp))

    @property
    def skipped_total(self) -> int:
        return sum(1 for e in self.entries if e.skipped)

    def to_dict(self) -> Dict:
        return {'step': self.step, 'mode': self.mode,
                'fired_total': self.fired_total, 'eligible_total': self.eligible_total,
                'target_clamp': self.target_clamp,
                'entries': [entry.to_dict() for entry in self.entries]}

    @classmethod
    def from_dict(cls, data: Dict) -> 'SurgeryReport':
        return cls(int(data['step']), str(data['mode']),
                   [SurgeryEntry.from_dict(e) for e in data.get('entries', [])],
                   int(data['fired_total']), int(data['eligible_total']),
                   float(data.get('target_clamp', TARGET_CLAMP)))


@dataclass
class CombineResult:
    combined: Dict[str, GradVector]
    report: SurgeryReport
    ema: EmaStore
    rng: StepRNG


def resolve_task_subset(cfg: VaccineConfig,
                        task_sizes: Mapping[TaskId, float]) -> FrozenSet[TaskId]:
    """Tasks whose gradients may be altered."""
    if cfg.task_subset == 'explicit':
        named = {task.id: task for task in task_sizes}
        resolved = frozenset(named.get(i, TaskId(i)) for i in cfg.subset_tasks)
    elif cfg.task_subset == 'all_task':
        resolved = frozenset(task_sizes)
    else:
        high = cfg.task_subset == 'hrl_only'
        resolved = frozenset(task for task, size in task_sizes.items()
                             if (size >= cfg.resource_threshold) == high)
    if not resolved:
        raise ConfigurationError(
            f"Task subset '{cfg.task_subset}' resolved to no tasks "
            f"(threshold {cfg.resource_threshold!r})")
    return resolved


def _stack_sum(vectors: List[GradVector], group: str) -> GradVector:
    return GradVector(np.sum(np.stack([v.values for v in vectors]), axis=0), group)


class _GroupSurgeon:
    """Runs the inner surgery loops of one parameter group."""

    def __init__(self, cfg: VaccineConfig, ema: EmaStore, logger: logging.Logger):
        self.cfg = cfg
        self.ema = ema
        self.logger = logger

    def target(self, i: TaskId, j: TaskId, group: str) -> float:
        if self.cfg.mode == 'gradvac':
            return self.ema.get(i.id, j.id, group)
        if self.cfg.mode == 'fixed_target':
            return float(self.cfg.fixed_target)
        return 0.0

    def align(self, g_i: GradVector, reference: GradVector, target: float):
        cfg = self.cfg
        if cfg.mode == 'pcgrad':
            return pcgrad_project(g_i, reference, cfg.norm_tolerance)
        return vaccine_align(g_i, reference, target, cfg.norm_tolerance, cfg.target_clamp)

    def run(self, group: str, tasks: List[TaskId], subset: FrozenSet[TaskId],
            originals: Dict[TaskId, GradVector], generator: np.random.Generator,
            report: SurgeryReport) -> GradVector:
        cfg = self.cfg
        working = dict(originals)

        for i in tasks:
            if i not in subset:
                continue
            partners = [t for t in tasks if t != i]
            for index in generator.permutation(len(partners)):
                j = partners[int(index)]
                reference = originals[j] if cfg.reference == 'original' else working[j]
                similarity = cosine(working[i], reference, cfg.norm_tolerance)
                target = self.target(i, j, group)

                if similarity.degenerate:
                    self.logger.debug(f"Step {report.step}: skipped degenerate pair "
                                      f"({i}, {j}) in group '{group}'")
                    report.entries.append(SurgeryEntry(
                        i.id, j.id, group, 0.0, target, False, cfg.mode, skipped=True))
                    continue

                phi = similarity.value
                bounded = bound_target(target, cfg.target_clamp)
                clamped = bounded != target
                fired = phi < bounded
                if fired:
                    before = working[i]
                    result = self.align(before, reference, bounded)
                    aligned = result.vector
                    if clamped:
                        self.logger.warning(f"Step {report.step}, pair ({i}, {j}), "
                                            f"group '{group}': target {target!r} "
                                            f"clamped to {bounded!r}")
                    if cfg.preserve_norm:
                        aligned = rescale_to_norm(aligned, before.norm,
                                                  cfg.norm_tolerance).vector
                    working[i] = aligned
                    report.fired_total += 1

                report.eligible_total += 1
                report.entries.append(SurgeryEntry(
                    i.id, j.id, group, phi, target, fired, cfg.mode, clamped=clamped))

                if cfg.mode == 'gradvac' and cfg.update_ema:
                    self.ema.update(i.id, j.id, group, phi)

        return _stack_sum([working[t] for t in tasks], group)


def combine_step(bundle: GradientBundle, partition: GroupPartition, ema: EmaStore,
                 cfg: VaccineConfig, rng: StepRNG,
                 task_sizes: Optional[Mapping[TaskId, float]] = None) -> CombineResult:
    """Apply surgery to every group of one step and sum the altered gradients.

    The EMA store is updated in place and returned; the returned RNG has
    advanced by one step.
    """
    logger = logging.getLogger('gradvac.engine')
    bundle.validate(partition)
    tasks = bundle.tasks
    if task_sizes is not None:
        unregistered = [str(t) for t in tasks if t not in task_sizes]
        if unregistered:
            raise ValidationError(f"Tasks missing from task sizes: {unregistered}")

    report = SurgeryReport(bundle.step, cfg.mode, target_clamp=cfg.target_clamp)

    if cfg.mode == 'sum_baseline':
        combined = {name: _stack_sum([bundle.per_task[t][name] for t in tasks], name)
                    for name in partition.names}
        return CombineResult(combined, report, ema, rng.advance())

    if task_sizes is None:
        if cfg.task_subset in ('hrl_only', 'lrl_only'):
            raise ConfigurationError(
                f"Task subset '{cfg.task_subset}' needs declared task sizes")
        task_sizes = {task: 0 for task in tasks}
    subset = resolve_task_subset(cfg, task_sizes)

    surgeon = _GroupSurgeon(cfg, ema, logger)
    combined = {}
    for group in partition.groups:
        originals = {t: bundle.per_task[t][group.name] for t in tasks}
        combined[group.name] = surgeon.run(group.name, tasks, subset, originals,
                                           rng.stream(group.name), report)

    logger.debug(f"Step {bundle.step}: {cfg.mode} fired {report.fired_total} of "
                 f"{report.eligible_total} eligible pairs")
    return CombineResult(combined, report, ema, rng.advance())
