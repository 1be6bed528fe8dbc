# suite/problems.py

"""Synthetic multi-task problems with analytic gradients."""

import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.engine import GradientBundle
from core.errors import ConfigurationError, DimensionError, ValidationError
from core.geometry import GradVector
from core.partition import GroupPartition, ParameterLayout, TaskId, make_task_ids


class SyntheticProblem(ABC):
    """A set of tasks sharing one flat parameter vector."""

    def __init__(self, name: str, tasks: List[TaskId], layout: ParameterLayout,
                 task_sizes: Optional[Sequence[float]] = None,
                 metadata: Optional[Dict] = None):
        self.name = name
        self.tasks = tasks
        self.layout = layout
        sizes = list(task_sizes) if task_sizes is not None else [1.0] * len(tasks)
        if len(sizes) != len(tasks):
            raise ValidationError(f"{len(sizes)} task sizes for {len(tasks)} tasks")
        self.task_sizes: Dict[TaskId, float] = dict(zip(tasks, sizes))
        self.metadata = metadata or {}

    @property
    def dimension(self) -> int:
        return self.layout.size

    @property
    def families(self) -> Optional[Dict[TaskId, str]]:
        return None

    @abstractmethod
    def task_loss(self, index: int, theta: np.ndarray) -> float:
        pass

    @abstractmethod
    def task_gradient(self, index: int, theta: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def initial_point(self) -> np.ndarray:
        pass

    def task_losses(self, theta: np.ndarray) -> np.ndarray:
        return np.array([self.task_loss(task.id, theta) for task in self.tasks])

    def joint_loss(self, theta: np.ndarray) -> float:
        return float(np.sum(self.task_losses(theta)))

    def lipschitz_constant(self) -> Optional[float]:
        """Lipschitz constant of the joint gradient, when known exactly."""
        return None

    def describe(self) -> Dict:
        return {'name': self.name, 'dimension': self.dimension,
                'tasks': [{'id': t.id, 'name': t.name, 'size': self.task_sizes[t]}
                          for t in self.tasks],
                **self.metadata}


@dataclass
class QuadraticTask:
    """L(theta) = 1/2 (theta - c)^T A (theta - c) with A = F^T F."""
    name: str
    center: np.ndarray
    factor: np.ndarray
    size: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.factor = np.atleast_2d(np.asarray(self.factor, dtype=np.float64))
        if self.center.ndim != 1:
            raise DimensionError(f"Task '{self.name}' center must be a vector")
        if self.factor.shape[1] != self.center.size:
            raise DimensionError(
                f"Task '{self.name}' curvature factor has shape {self.factor.shape}, "
                f"center has {self.center.size} entries")
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.factor))):
            raise ValidationError(f"Task '{self.name}' has non-finite coefficients")
        self.curvature = self.factor.T @ self.factor

    @classmethod
    def diagonal(cls, name: str, center: Sequence[float], curvature: Sequence[float],
                 size: float = 1.0) -> 'QuadraticTask':
        curvature = np.asarray(curvature, dtype=np.float64)
        if np.any(curvature < 0):
            raise ValidationError(f"Task '{name}' diagonal curvature must be non-negative")
        return cls(name, center, np.diag(np.sqrt(curvature)), size)

    def loss(self, theta: np.ndarray) -> float:
        offset = theta - self.center
        return 0.5 * float(offset @ self.curvature @ offset)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.curvature @ (theta - self.center)


def _block_layout(dimension: int, blocks: int) -> ParameterLayout:
    if blocks < 1 or blocks > dimension:
        raise ConfigurationError(f"blocks must lie in [1, {dimension}], got {blocks}")
    if blocks == 1:
        return ParameterLayout((('theta', (dimension,)),))
    sizes = [len(part) for part in np.array_split(np.arange(dimension), blocks)]
    return ParameterLayout(tuple((f'block_{b}', (size,)) for b, size in enumerate(sizes)))


class QuadraticProblem(SyntheticProblem):
    """Convex quadratic tasks; the joint optimum has a closed form."""

    def __init__(self, tasks: Sequence[QuadraticTask], blocks: int = 1,
                 initial: Optional[Sequence[float]] = None, name: str = 'quadratic',
                 metadata: Optional[Dict] = None):
        if not tasks:
            raise ValidationError("Quadratic problem needs at least one task")
        dimension = tasks[0].center.size
        for task in tasks:
            if task.center.size != dimension:
                raise DimensionError(
                    f"Task '{task.name}' has dimension {task.center.size}, expected {dimension}")
        super().__init__(name, make_task_ids([t.name for t in tasks]),
                         _block_layout(dimension, blocks),
                         [t.size for t in tasks], metadata)
        self.quadratics = list(tasks)
        if initial is None:
            self.initial = np.zeros(dimension)
        else:
            self.initial = np.asarray(initial, dtype=np.float64)
            self.layout.check(self.initial)

    def task_loss(self, index: int, theta: np.ndarray) -> float:
        return self.quadratics[index].loss(theta)

    def task_gradient(self, index: int, theta: np.ndarray) -> np.ndarray:
        return self.quadratics[index].gradient(theta)

    def initial_point(self) -> np.ndarray:
        return self.initial.copy()

    def joint_curvature(self) -> np.ndarray:
        return sum(task.curvature for task in self.quadratics)

    def lipschitz_constant(self) -> float:
        return float(np.linalg.eigvalsh(self.joint_curvature())[-1])

    def restrict(self, names: Sequence[str], name: Optional[str] = None) -> 'QuadraticProblem':
        """Sub-problem over the named tasks, in that order, from the same start point."""
        by_name = {task.name: task for task in self.quadratics}
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise ConfigurationError(f"Problem '{self.name}' has no tasks named {unknown}")
        if len(set(names)) != len(names):
            raise ConfigurationError(f"Repeated task names in {list(names)}")
        return QuadraticProblem([by_name[n] for n in names], blocks=len(self.layout.tensors),
                                initial=self.initial, name=name or self.name)

    def optimum(self) -> Tuple[np.ndarray, float]:
        """Minimizer of the summed loss and its value."""
        rhs = sum(task.curvature @ task.center for task in self.quadratics)
        theta, *_ = np.linalg.lstsq(self.joint_curvature(), rhs, rcond=None)
        return theta, self.joint_loss(theta)


@dataclass(frozen=True)
class FamilySpec:
    """Construction parameters of a family-clustered task set."""
    num_families: int = 3
    tasks_per_family: int = 3
    dimension: int = 16
    cross_family_angle: float = 60.0
    within_family_noise: float = 0.1
    curvature_spread: float = 0.0
    radius: float = 1.0
    blocks: int = 1
    seed: int = 0
    task_sizes: Optional[Tuple[float, ...]] = None

    def validate(self):
        if self.num_families < 2:
            raise ConfigurationError("num_families must be >= 2")
        if self.tasks_per_family < 2:
            raise ConfigurationError("tasks_per_family must be >= 2")
        if self.dimension < self.num_families + 1:
            raise ConfigurationError(
                f"dimension must be >= num_families + 1 = {self.num_families + 1}")
        if not (0.0 <= self.cross_family_angle <= 90.0):
            raise ConfigurationError("cross_family_angle must lie in [0, 90] degrees")
        if self.within_family_noise < 0 or self.curvature_spread < 0 or self.radius <= 0:
            raise ConfigurationError(
                "within_family_noise and curvature_spread must be >= 0, radius > 0")
        count = self.num_families * self.tasks_per_family
        if self.task_sizes is not None and len(self.task_sizes) != count:
            raise ConfigurationError(f"task_sizes must list {count} sizes")


class FamilyTaskSet(QuadraticProblem):
    """Quadratic tasks whose gradient directions cluster by family."""

    def __init__(self, tasks: Sequence[QuadraticTask], family_of: Mapping[str, str],
                 spec: FamilySpec):
        super().__init__(tasks, blocks=spec.blocks, name='family',
                         metadata={'construction': asdict(spec)})
        self.spec = spec
        self.base_directions: Dict[str, np.ndarray] = {}
        self._family_of = dict(family_of)

    @property
    def families(self) -> Dict[TaskId, str]:
        return {task: self._family_of[task.name] for task in self.tasks}

    def describe(self) -> Dict:
        summary = super().describe()
        for entry in summary['tasks']:
            entry['family'] = self._family_of[entry['name']]
        return summary


def build_family_problem(spec: FamilySpec) -> FamilyTaskSet:
    """Deterministic family-clustered quadratics.

    Family base directions share a common component so that every pair of
    families meets at cross_family_angle; task centers add isotropic noise
    of norm about within_family_noise to their family direction.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shared = math.cos(math.radians(spec.cross_family_angle))
    shared = min(1.0, max(0.0, shared))

    tasks = []
    family_of = {}
    bases = {}
    count = spec.num_families * spec.tasks_per_family
    sizes = spec.task_sizes or (1.0,) * count
    for f in range(spec.num_families):
        family = f'family_{f}'
        base = np.zeros(spec.dimension)
        base[0] = math.sqrt(shared)
        base[f + 1] = math.sqrt(1.0 - shared)
        bases[family] = base
        for t in range(spec.tasks_per_family):
            noise = rng.standard_normal(spec.dimension) / math.sqrt(spec.dimension)
            center = spec.radius * (base + spec.within_family_noise * noise)
            jitter = rng.uniform(0.0, 1.0, spec.dimension)
            curvature = 1.0 + spec.curvature_spread * jitter
            name = f'f{f}_t{t}'
            tasks.append(QuadraticTask.diagonal(name, center, curvature,
                                                sizes[len(tasks)]))
            family_of[name] = family

    problem = FamilyTaskSet(tasks, family_of, spec)
    problem.base_directions = bases
    return problem


def build_conflict_benchmark(seed: int, dimension: int = 8) -> QuadraticProblem:
    """Anti-correlated pair (c1 = -c2, shared curvature) plus two aligned tasks."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
    eigenvalues = rng.uniform(0.5, 2.0, dimension)
    factor = np.diag(np.sqrt(eigenvalues)) @ basis.T

    conflict = rng.standard_normal(dimension)
    conflict /= np.linalg.norm(conflict)
    aligned = rng.standard_normal(dimension)
    aligned /= np.linalg.norm(aligned)
    tasks = [
        QuadraticTask('conflict_a', conflict, factor),
        QuadraticTask('conflict_b', -conflict, factor),
        QuadraticTask('aligned_a', aligned + 0.05 * rng.standard_normal(dimension), factor),
        QuadraticTask('aligned_b', aligned + 0.05 * rng.standard_normal(dimension), factor),
    ]
    initial = 2.0 * rng.standard_normal(dimension)
    return QuadraticProblem(tasks, initial=initial, name='conflict_benchmark',
                            metadata={'construction': {'seed': seed, 'dimension': dimension}})


class LayeredLinearModel(SyntheticProblem):
    """Chain of affine layers fitted to per-task linear targets.

    Parameters are named "layer_<l>.weight" and "layer_<l>.bias", so every
    granularity (whole model, halves, layers, single matrices) is meaningful.
    """

    def __init__(self, layer_dims: Sequence[int] = (4, 6, 3), num_tasks: int = 3,
                 samples: int = 32, task_similarity: float = 0.5, seed: int = 0):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 3:
            raise ConfigurationError("layer_dims needs at least two layers (three sizes)")
        if min(layer_dims) < 1 or num_tasks < 1 or samples < 1:
            raise ConfigurationError("layer sizes, num_tasks and samples must be positive")
        if not (0.0 <= task_similarity <= 1.0):
            raise ConfigurationError("task_similarity must lie in [0, 1]")

        tensors = []
        for l in range(len(layer_dims) - 1):
            tensors.append((f'layer_{l}.weight', (layer_dims[l + 1], layer_dims[l])))
            tensors.append((f'layer_{l}.bias', (layer_dims[l + 1],)))
        names = [f'task_{i}' for i in range(num_tasks)]
        super().__init__('layered', make_task_ids(names), ParameterLayout(tuple(tensors)),
                         metadata={'construction': {
                             'layer_dims': layer_dims, 'num_tasks': num_tasks,
                             'samples': samples, 'task_similarity': task_similarity,
                             'seed': seed}})

        rng = np.random.default_rng(seed)
        self.layer_count = len(layer_dims) - 1
        self.inputs = rng.standard_normal((layer_dims[0], samples))
        shared = rng.standard_normal((layer_dims[-1], layer_dims[0]))
        self.targets = []
        for _ in range(num_tasks):
            own = rng.standard_normal((layer_dims[-1], layer_dims[0]))
            mapping = math.sqrt(task_similarity) * shared + math.sqrt(1 - task_similarity) * own
            self.targets.append(mapping @ self.inputs)

        initial = {}
        for name, shape in self.layout.tensors:
            scale = 0.5 / math.sqrt(shape[-1]) if name.endswith('weight') else 0.0
            initial[name] = scale * rng.standard_normal(shape)
        self.initial = self.layout.pack(initial)

    def _forward(self, theta: np.ndarray) -> Tuple[Dict[str, np.ndarray], List[np.ndarray]]:
        params = self.layout.unpack(theta)
        activations = [self.inputs]
        for l in range(self.layer_count):
            weight = params[f'layer_{l}.weight']
            bias = params[f'layer_{l}.bias']
            activations.append(weight @ activations[-1] + bias[:, None])
        return params, activations

    def task_loss(self, index: int, theta: np.ndarray) -> float:
        _, activations = self._forward(theta)
        residual = activations[-1] - self.targets[index]
        return 0.5 * float(np.sum(residual ** 2)) / self.inputs.shape[1]

    def task_gradient(self, index: int, theta: np.ndarray) -> np.ndarray:
        params, activations = self._forward(theta)
        delta = (activations[-1] - self.targets[index]) / self.inputs.shape[1]
        grads = {}
        for l in reversed(range(self.layer_count)):
            grads[f'layer_{l}.weight'] = delta @ activations[l].T
            grads[f'layer_{l}.bias'] = delta.sum(axis=1)
            delta = params[f'layer_{l}.weight'].T @ delta
        return self.layout.pack(grads)

    def initial_point(self) -> np.ndarray:
        return self.initial.copy()


def task_gradients(problem: SyntheticProblem, theta: np.ndarray, partition: GroupPartition,
                   step: int = 0, tasks: Optional[Sequence[TaskId]] = None,
                   multiplicities: Optional[Mapping[TaskId, int]] = None) -> GradientBundle:
    """Exact per-task, per-group gradients at theta.

    A task drawn m times in a sampled minibatch contributes m times its gradient.
    """
    theta = np.asarray(theta, dtype=np.float64)
    problem.layout.check(theta)
    if partition.layout.size != problem.dimension:
        raise DimensionError(
            f"Partition covers {partition.layout.size} parameters, "
            f"problem has {problem.dimension}")

    per_task = {}
    for task in (tasks if tasks is not None else problem.tasks):
        flat = problem.task_gradient(task.id, theta)
        if multiplicities is not None:
            flat = flat * multiplicities.get(task, 1)
        per_task[task] = {name: GradVector(values, name)
                          for name, values in partition.extract(flat).items()}
    return GradientBundle(step, per_task)
