# core/ema.py

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ValidationError

SNAPSHOT_VERSION = 1

EmaKey = Tuple[int, int, str]


def _check_beta(beta: float):
    if not (isinstance(beta, (int, float)) and 0.0 < beta <= 1.0):
        raise ConfigurationError(f"EMA decay beta must lie in (0, 1], got {beta!r}")


class EmaStore:
    """Directed per-(task i, task j, group k) moving average of similarities.

    Missing keys read as 0, the initial value of every target.
    """

    def __init__(self, beta: float, values: Optional[Dict[EmaKey, float]] = None,
                 groups: Optional[Sequence[str]] = None,
                 tasks: Optional[Sequence[str]] = None):
        _check_beta(beta)
        self.beta = float(beta)
        self.values: Dict[EmaKey, float] = {}
        self.groups = list(groups) if groups is not None else None
        self.tasks = list(tasks) if tasks is not None else None
        for key, value in (values or {}).items():
            self.set(*key, value)

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, key: EmaKey) -> bool:
        return key in self.values

    def get(self, i: int, j: int, group: str) -> float:
        return self.values.get((i, j, group), 0.0)

    def set(self, i: int, j: int, group: str, value: float):
        if not math.isfinite(value) or abs(value) > 1.0:
            raise ValidationError(f"EMA value must lie in [-1, 1], got {value!r}")
        self.values[(int(i), int(j), str(group))] = float(value)

    def update(self, i: int, j: int, group: str, observed: float) -> float:
        """Fold one observed cosine into the average and return the new value."""
        key = (int(i), int(j), str(group))
        previous = self.values.get(key, 0.0)
        value = (1.0 - self.beta) * previous + self.beta * observed
        value = min(1.0, max(-1.0, value))
        self.values[key] = value
        return value

    def copy(self) -> 'EmaStore':
        clone = EmaStore(self.beta, groups=self.groups, tasks=self.tasks)
        clone.values = dict(self.values)
        return clone

    def keys(self) -> List[EmaKey]:
        return sorted(self.values)

    def to_dict(self) -> Dict:
        """Versioned snapshot; floats survive a JSON round trip exactly."""
        snapshot = {
            'format_version': SNAPSHOT_VERSION,
            'beta': self.beta,
            'entries': [{'i': i, 'j': j, 'group': group, 'value': self.values[(i, j, group)]}
                        for i, j, group in self.keys()],
        }
        if self.groups is not None:
            snapshot['groups'] = list(self.groups)
        if self.tasks is not None:
            snapshot['tasks'] = list(self.tasks)
        return snapshot

    @classmethod
    def from_dict(cls, snapshot: Dict) -> 'EmaStore':
        """Restore a snapshot produced by to_dict."""
        if not isinstance(snapshot, dict):
            raise ConfigurationError("EMA snapshot must be a JSON object")
        version = snapshot.get('format_version')
        if version != SNAPSHOT_VERSION:
            raise ConfigurationError(f"Unsupported EMA snapshot version: {version!r}")
        for key in ('beta', 'entries'):
            if key not in snapshot:
                raise ConfigurationError(f"Missing required key in EMA snapshot: {key}")

        store = cls(snapshot['beta'], groups=snapshot.get('groups'),
                    tasks=snapshot.get('tasks'))
        for entry in snapshot['entries']:
            try:
                store.set(entry['i'], entry['j'], entry['group'], entry['value'])
            except (KeyError, TypeError) as e:
                raise ConfigurationError(f"Malformed EMA entry {entry!r}: {e}")
        return store

    def check_compatible(self, groups: Iterable[str], tasks: Optional[Sequence[str]] = None):
        """Raise if this store was built for a different partition or task list."""
        groups = list(groups)
        if self.groups is not None and sorted(self.groups) != sorted(groups):
            raise ValidationError(
                f"EMA groups {self.groups} do not match partition groups {groups}")
        unknown = {group for _, _, group in self.values} - set(groups)
        if unknown:
            raise ValidationError(f"EMA refers to unknown groups: {sorted(unknown)}")
        if tasks is not None and self.tasks is not None and list(tasks) != self.tasks:
            raise ValidationError(
                f"EMA tasks {self.tasks} do not match dump tasks {list(tasks)}")


def ema_closed_form(history: Sequence[float], beta: float) -> float:
    """Unrolled moving average: beta * sum (1 - beta)^(t - s) * phi_s."""
    _check_beta(beta)
    if len(history) == 0:
        return 0.0
    values = np.asarray(history, dtype=np.float64)
    powers = np.arange(values.size - 1, -1, -1, dtype=np.float64)
    weights = beta * np.power(1.0 - beta, powers)
    return float(np.dot(weights, values))
