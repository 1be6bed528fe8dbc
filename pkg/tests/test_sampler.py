# tests/test_sampler.py

import numpy as np
import pytest

from core.errors import ConfigurationError
from core.partition import TaskId
from core.sampler import SamplerConfig, TaskSampler, sample_minibatch, sampling_distribution

A = TaskId(0, 'A')
B = TaskId(1, 'B')


def test_temperature_four_flattens_sixteen_to_one():
    dist = sampling_distribution(SamplerConfig({A: 16, B: 1}, temperature=4.0))
    assert abs(dist[A] - 2 / 3) < 1e-12
    assert abs(dist[B] - 1 / 3) < 1e-12


def test_temperature_one_is_proportional():
    dist = sampling_distribution(SamplerConfig({A: 3, B: 1}, temperature=1.0))
    assert dist[A] == pytest.approx(0.75, abs=1e-15)
    assert dist[B] == pytest.approx(0.25, abs=1e-15)


def test_large_temperature_is_nearly_uniform():
    sizes = {TaskId(i): size for i, size in enumerate([1e6, 10, 3, 250])}
    dist = sampling_distribution(SamplerConfig(sizes, temperature=1e6))
    assert all(abs(p - 0.25) < 1e-4 for p in dist.values())
    assert sum(dist.values()) == pytest.approx(1.0)


def test_single_task_repeats():
    cfg = SamplerConfig({A: 5})
    tasks, _ = sample_minibatch(cfg, 7, np.random.default_rng(0))
    assert tasks == [A] * 7


def test_fixed_seed_is_deterministic():
    cfg = SamplerConfig({A: 16, B: 1}, temperature=4.0, seed=3)
    first, second = TaskSampler(cfg), TaskSampler(cfg)
    for _ in range(5):
        assert first.draw(8) == second.draw(8)


def test_empirical_frequency():
    cfg = SamplerConfig({A: 16, B: 1}, temperature=4.0, seed=11)
    tasks, _ = sample_minibatch(cfg, 30000, np.random.default_rng(cfg.seed))
    frequency = sum(1 for t in tasks if t == A) / len(tasks)
    assert abs(frequency - 2 / 3) < 0.01


def test_draw_counts_and_effective_batch():
    sampler = TaskSampler(SamplerConfig({A: 1, B: 1}, seed=0))
    draw = sampler.draw(6)
    assert sum(draw.values()) == 6
    assert TaskSampler.effective_batch(draw) == len(draw)


def test_invalid_configuration():
    with pytest.raises(ConfigurationError):
        SamplerConfig({A: 1}, temperature=0.5)
    with pytest.raises(ConfigurationError):
        SamplerConfig({A: 0})
    with pytest.raises(ConfigurationError):
        SamplerConfig({})
    with pytest.raises(ConfigurationError):
        sample_minibatch(SamplerConfig({A: 1}), 0, np.random.default_rng(0))
