# core/partition.py

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError, ValidationError

GRANULARITIES = ('whole_model', 'enc_dec', 'all_layer', 'all_matrix')


@dataclass(frozen=True, order=True)
class TaskId:
    """Dense task identifier; equality and ordering use the id only."""
    id: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.id < 0:
            raise ValidationError(f"Task id must be non-negative, got {self.id}")

    def __str__(self) -> str:
        return self.name or str(self.id)


def make_task_ids(names: Sequence[str]) -> List[TaskId]:
    """Assign dense ids in declaration order."""
    if len(set(names)) != len(names):
        raise ValidationError(f"Duplicate task names: {list(names)}")
    return [TaskId(index, name) for index, name in enumerate(names)]


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered named tensors packed into one flat parameter vector."""
    tensors: Tuple[Tuple[str, Tuple[int, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.tensors]
        if len(set(names)) != len(names):
            raise ValidationError(f"Duplicate tensor names in layout: {names}")
        if not names:
            raise ValidationError("Parameter layout is empty")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.tensors]

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.tensors)

    def offsets(self) -> Dict[str, slice]:
        """Flat slice of every tensor."""
        result = {}
        start = 0
        for name, shape in self.tensors:
            stop = start + int(np.prod(shape))
            result[name] = slice(start, stop)
            start = stop
        return result

    def shape(self, name: str) -> Tuple[int, ...]:
        return dict(self.tensors)[name]

    def unpack(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        """View the flat vector as named tensors."""
        self.check(flat)
        return {name: flat[span].reshape(self.shape(name))
                for name, span in self.offsets().items()}

    def pack(self, tensors: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(tensors[name], dtype=np.float64).ravel()
                               for name in self.names])

    def check(self, flat: np.ndarray):
        if flat.ndim != 1 or flat.size != self.size:
            raise DimensionError(
                f"Parameter vector has shape {flat.shape}, layout expects ({self.size},)")


@dataclass(frozen=True)
class ParameterGroup:
    """One surgery unit: a named set of tensors treated as a single vector."""
    name: str
    tensors: Tuple[str, ...]
    length: int


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint, exhaustive grouping of a layout's tensors."""
    groups: Tuple[ParameterGroup, ...]
    layout: ParameterLayout
    granularity: str = 'custom'

    def __post_init__(self):
        names = [group.name for group in self.groups]
        if not names:
            raise ValidationError("Partition has no groups")
        if len(set(names)) != len(names):
            raise ValidationError(f"Duplicate group names: {names}")

        covered = [tensor for group in self.groups for tensor in group.tensors]
        if len(set(covered)) != len(covered):
            raise ValidationError("Partition groups overlap")
        if set(covered) != set(self.layout.names):
            missing = set(self.layout.names) - set(covered)
            unknown = set(covered) - set(self.layout.names)
            raise ValidationError(
                f"Partition is not exhaustive over the layout "
                f"(missing={sorted(missing)}, unknown={sorted(unknown)})")

        for group in self.groups:
            expected = sum(int(np.prod(self.layout.shape(t))) for t in group.tensors)
            if expected != group.length:
                raise ValidationError(
                    f"Group '{group.name}' declares length {group.length}, "
                    f"tensors cover {expected}")

    @classmethod
    def from_lengths(cls, lengths: Sequence[Tuple[str, int]],
                     granularity: str = 'custom') -> 'GroupPartition':
        """Partition where each group is its own flat segment."""
        for name, length in lengths:
            if length <= 0:
                raise ValidationError(f"Group '{name}' must have positive length")
        layout = ParameterLayout(tuple((name, (int(length),)) for name, length in lengths))
        groups = tuple(ParameterGroup(name, (name,), int(length)) for name, length in lengths)
        return cls(groups, layout, granularity)

    @property
    def names(self) -> List[str]:
        return [group.name for group in self.groups]

    def lengths(self) -> Dict[str, int]:
        return {group.name: group.length for group in self.groups}

    def extract(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        """Split a flat parameter-space vector into per-group vectors."""
        tensors = self.layout.unpack(np.asarray(flat, dtype=np.float64))
        return {group.name: np.concatenate([tensors[t].ravel() for t in group.tensors])
                for group in self.groups}

    def assemble(self, group_vectors: Mapping[str, np.ndarray]) -> np.ndarray:
        """Inverse of extract."""
        tensors = {}
        for group in self.groups:
            vector = np.asarray(group_vectors[group.name], dtype=np.float64)
            if vector.size != group.length:
                raise DimensionError(
                    f"Group '{group.name}' vector has {vector.size} entries, "
                    f"expected {group.length}")
            start = 0
            for tensor in group.tensors:
                shape = self.layout.shape(tensor)
                stop = start + int(np.prod(shape))
                tensors[tensor] = vector[start:stop].reshape(shape)
                start = stop
        return self.layout.pack(tensors)


def _layer_of(tensor_name: str) -> str:
    return tensor_name.split('.')[0]


def build_partition(layout: ParameterLayout, granularity: str) -> GroupPartition:
    """Group a layout's tensors at one of the standard granularities.

    Tensor names of the form "<layer>.<param>" share a layer; enc_dec
    splits the ordered layers into a first and second half.
    """
    if granularity not in GRANULARITIES:
        raise ConfigurationError(
            f"Unknown granularity '{granularity}', expected one of {GRANULARITIES}")

    def group(name: str, tensors: Sequence[str]) -> ParameterGroup:
        length = sum(int(np.prod(layout.shape(t))) for t in tensors)
        return ParameterGroup(name, tuple(tensors), length)

    if granularity == 'whole_model':
        return GroupPartition((group('whole_model', layout.names),), layout, granularity)

    if granularity == 'all_matrix':
        groups = tuple(group(name, [name]) for name in layout.names)
        return GroupPartition(groups, layout, granularity)

    layers: Dict[str, List[str]] = {}
    for name in layout.names:
        layers.setdefault(_layer_of(name), []).append(name)

    if granularity == 'all_layer':
        groups = tuple(group(layer, tensors) for layer, tensors in layers.items())
        return GroupPartition(groups, layout, granularity)

    ordered = list(layers)
    if len(ordered) < 2:
        raise ConfigurationError("enc_dec granularity needs at least two layers")
    half = len(ordered) // 2
    encoder = [t for layer in ordered[:half] for t in layers[layer]]
    decoder = [t for layer in ordered[half:] for t in layers[layer]]
    return GroupPartition((group('encoder', encoder), group('decoder', decoder)),
                          layout, granularity)
