# planner/dumps.py

"""Gradient dump files: externally produced per-task gradients for one step."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional

import numpy as np

from core.engine import GradientBundle
from core.errors import ValidationError
from core.geometry import GradVector
from core.partition import GroupPartition, TaskId, make_task_ids
from .experiment import SPEC_VERSION, ConfigSource, read_config

COMBINED_TASK = 'combined'

logger = logging.getLogger('gradvac.planner.dumps')


@dataclass
class GradientDump:
    """A validated dump: partition, tasks and their gradients."""
    step: int
    partition: GroupPartition
    tasks: List[TaskId]
    sizes: Dict[TaskId, Optional[float]]
    bundle: GradientBundle

    @property
    def task_names(self) -> List[str]:
        return [task.name for task in self.tasks]

    def task_sizes(self) -> Optional[Dict[TaskId, float]]:
        """Declared sizes, or None unless every task declares one."""
        if any(size is None for size in self.sizes.values()):
            return None
        return dict(self.sizes)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _parse_partition(source: ConfigSource, data: Dict) -> GroupPartition:
    section = data.get('partition')
    if not isinstance(section, dict) or not isinstance(section.get('groups'), list):
        raise source.error("'partition.groups' must be a list", ('partition',))
    lengths = []
    for index, entry in enumerate(section['groups']):
        path = ('partition', 'groups', index)
        if not isinstance(entry, dict) or not isinstance(entry.get('name'), str):
            raise source.error("Each group needs a string 'name'", path)
        length = entry.get('length')
        if not isinstance(length, int) or isinstance(length, bool) or length <= 0:
            raise source.error(f"Group '{entry['name']}' needs a positive integer 'length'",
                               path + ('length',))
        lengths.append((entry['name'], length))
    try:
        return GroupPartition.from_lengths(lengths)
    except ValidationError as e:
        raise source.error(str(e), ('partition',))


def load_dump(path: str) -> GradientDump:
    """Read and fully validate a gradient dump file."""
    source = read_config(path)
    data = source.data
    if data.get('spec_version') != SPEC_VERSION:
        raise source.error(f"Unsupported spec_version {data.get('spec_version')!r}, "
                           f"expected {SPEC_VERSION}", ('spec_version',))
    step = data.get('step')
    if not isinstance(step, int) or isinstance(step, bool) or step < 0:
        raise source.error(f"'step' must be a non-negative integer, got {step!r}", ('step',))

    partition = _parse_partition(source, data)
    lengths = partition.lengths()

    entries = data.get('tasks')
    if not isinstance(entries, list) or not entries:
        raise source.error("'tasks' must be a non-empty list", ('tasks',))
    names = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict) or not isinstance(entry.get('name'), str):
            raise source.error("Each task needs a string 'name'", ('tasks', index))
        names.append(entry['name'])
    try:
        tasks = make_task_ids(names)
    except ValidationError as e:
        raise source.error(str(e), ('tasks',))

    sizes: Dict[TaskId, Optional[float]] = {}
    per_task: Dict[TaskId, Dict[str, GradVector]] = {}
    for index, (task, entry) in enumerate(zip(tasks, entries)):
        path = ('tasks', index)
        size = entry.get('size')
        if size is not None and not (_is_number(size) and math.isfinite(size) and size >= 0):
            raise source.error(f"Task '{task}' size must be a finite number >= 0",
                               path + ('size',))
        sizes[task] = None if size is None else float(size)

        groups = entry.get('groups')
        if not isinstance(groups, dict) or set(groups) != set(lengths):
            raise source.error(f"Task '{task}' must provide exactly the groups "
                               f"{sorted(lengths)}", path + ('groups',))
        per_task[task] = {}
        for name, values in groups.items():
            where = path + ('groups', name)
            if not isinstance(values, list) or not all(_is_number(v) for v in values):
                raise source.error(f"Task '{task}' group '{name}' must be a list of numbers",
                                   where)
            if len(values) != lengths[name]:
                raise source.error(f"Task '{task}' group '{name}' has {len(values)} values, "
                                   f"partition declares {lengths[name]}", where)
            try:
                per_task[task][name] = GradVector(values, name)
            except ValidationError as e:
                raise source.error(str(e), where)

    logger.info(f"Loaded dump {path}: step {step}, {len(tasks)} tasks, "
                f"{len(lengths)} groups")
    return GradientDump(step, partition, tasks, sizes, GradientBundle(step, per_task))


def dump_document(step: int, partition: GroupPartition,
                  tasks: Mapping[str, Mapping[str, np.ndarray]],
                  sizes: Optional[Mapping[str, float]] = None) -> Dict:
    """Dump schema for named per-group gradients; tasks keep the given order."""
    sizes = sizes or {}
    entries = []
    for name, groups in tasks.items():
        entry = {'name': name,
                 'groups': {group: [float(v) for v in np.asarray(groups[group]).ravel()]
                            for group in partition.names}}
        if sizes.get(name) is not None:
            entry['size'] = float(sizes[name])
        entries.append(entry)
    return {'spec_version': SPEC_VERSION, 'step': int(step),
            'partition': {'groups': [{'name': g.name, 'length': g.length}
                                     for g in partition.groups]},
            'tasks': entries}


def combined_document(step: int, partition: GroupPartition,
                      combined: Mapping[str, GradVector]) -> Dict:
    """The combined gradient as a single-task dump."""
    return dump_document(step, partition,
                         {COMBINED_TASK: {name: v.values for name, v in combined.items()}})
