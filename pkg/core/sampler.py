# core/sampler.py

"""Temperature-based task sampling over unbalanced task sizes."""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from .errors import ConfigurationError
from .partition import TaskId

DEFAULT_TEMPERATURE = 5.0


@dataclass(frozen=True)
class SamplerConfig:
    """Temperature T and per-task data sizes L_i."""
    task_sizes: Mapping[TaskId, float]
    temperature: float = DEFAULT_TEMPERATURE
    seed: int = 0

    def __post_init__(self):
        if not self.task_sizes:
            raise ConfigurationError("Sampler needs at least one task")
        for task, size in self.task_sizes.items():
            if not (math.isfinite(size) and size > 0):
                raise ConfigurationError(f"Task '{task}' size must be positive, got {size!r}")
        if not (math.isfinite(self.temperature) and self.temperature >= 1.0):
            raise ConfigurationError(
                f"Sampling temperature must be >= 1, got {self.temperature!r}")

    @property
    def sizes(self) -> List[Tuple[TaskId, float]]:
        return sorted(self.task_sizes.items())

    @property
    def tasks(self) -> List[TaskId]:
        return [task for task, _ in self.sizes]


def sampling_distribution(cfg: SamplerConfig) -> Dict[TaskId, float]:
    """p_i proportional to (L_i / sum L)^(1/T), renormalized."""
    sizes = np.array([size for _, size in cfg.sizes], dtype=np.float64)
    weights = np.power(sizes / sizes.sum(), 1.0 / cfg.temperature)
    probabilities = weights / weights.sum()
    return {task: float(p) for task, p in zip(cfg.tasks, probabilities)}


def sample_minibatch(cfg: SamplerConfig, batch_tasks: int,
                     rng: np.random.Generator) -> Tuple[List[TaskId], np.random.Generator]:
    """Draw batch_tasks tasks i.i.d. with replacement."""
    if batch_tasks < 1:
        raise ConfigurationError(f"batch_tasks must be >= 1, got {batch_tasks}")
    tasks = cfg.tasks
    probabilities = np.array(list(sampling_distribution(cfg).values()))
    draws = rng.choice(len(tasks), size=batch_tasks, p=probabilities)
    return [tasks[int(index)] for index in draws], rng


class TaskSampler:
    """Owns the sampling Generator; one writer per instance."""

    def __init__(self, cfg: SamplerConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.distribution = sampling_distribution(cfg)

    def draw(self, batch_tasks: int) -> Counter:
        """Multiset of sampled tasks as task -> multiplicity."""
        tasks, self.rng = sample_minibatch(self.cfg, batch_tasks, self.rng)
        return Counter(tasks)

    @staticmethod
    def effective_batch(draw: Counter) -> int:
        """Number of distinct tasks in a drawn multiset."""
        return sum(1 for count in draw.values() if count > 0)
