# core/rng.py

"""Seeded random streams for reproducible surgery ordering."""

from dataclasses import dataclass
from typing import Dict

import numpy as np

ALGORITHM = 'PCG64'


@dataclass(frozen=True)
class StepRNG:
    """Immutable RNG state: a seed plus the number of completed steps.

    Each (step, group) pair gets its own independent Generator, so groups
    can be processed in any order without changing the draws.
    """
    seed: int
    counter: int = 0

    def stream(self, group: str) -> np.random.Generator:
        # Full name bytes, length first: distinct names never share a stream.
        raw = group.encode('utf-8')
        key = (self.counter, len(raw), *raw)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        return np.random.Generator(np.random.PCG64(sequence))

    def advance(self) -> 'StepRNG':
        return StepRNG(self.seed, self.counter + 1)

    def state(self) -> Dict:
        return {'algorithm': ALGORITHM, 'seed': self.seed, 'counter': self.counter}


def derive_seeds(seed: int, names) -> Dict[str, int]:
    """Independent child seeds for named consumers of one experiment seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(child.generate_state(1, dtype=np.uint32)[0])
            for name, child in zip(names, children)}
