# tests/test_problems.py

import numpy as np
import pytest

from core.errors import ConfigurationError, DimensionError
from core.geometry import cosine
from core.partition import build_partition
from suite.problems import (FamilySpec, LayeredLinearModel, QuadraticProblem, QuadraticTask,
                            build_conflict_benchmark, build_family_problem, task_gradients)

H = 1e-5


def central_difference(func, theta):
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = H
        grad[k] = (func(theta + step) - func(theta - step)) / (2 * H)
    return grad


def relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(analytic))


def test_identity_quadratic_gradient():
    problem = QuadraticProblem([QuadraticTask.diagonal('only', [1.0, 1.0], [1.0, 1.0])])
    partition = build_partition(problem.layout, 'whole_model')
    grads = task_gradients(problem, np.zeros(2), partition)
    assert np.array_equal(grads.per_task[problem.tasks[0]]['whole_model'].values, [-1.0, -1.0])


def test_gradient_vanishes_at_center():
    center = np.array([0.3, -1.2, 2.0])
    task = QuadraticTask('t', center, np.random.default_rng(0).standard_normal((3, 3)))
    assert np.allclose(task.gradient(center), 0.0)


def test_quadratic_matches_finite_differences():
    rng = np.random.default_rng(21)
    for _ in range(100):
        dim = int(rng.integers(2, 9))
        task = QuadraticTask('t', rng.standard_normal(dim), rng.standard_normal((dim, dim)))
        theta = rng.standard_normal(dim)
        assert relative_error(task.gradient(theta), central_difference(task.loss, theta)) < 1e-6


def test_layered_model_matches_finite_differences():
    model = LayeredLinearModel(layer_dims=(3, 4, 2), num_tasks=2, samples=8, seed=5)
    partition = build_partition(model.layout, 'all_matrix')
    rng = np.random.default_rng(8)
    for _ in range(100):
        theta = rng.standard_normal(model.dimension)
        grads = task_gradients(model, theta, partition)
        for task in model.tasks:
            numeric = partition.extract(central_difference(
                lambda x: model.task_loss(task.id, x), theta))
            for name in partition.names:
                analytic = grads.per_task[task][name].values
                assert relative_error(analytic, numeric[name]) < 1e-5


def test_task_gradients_rejects_wrong_dimension():
    problem = QuadraticProblem([QuadraticTask.diagonal('only', [1.0, 1.0], [1.0, 1.0])])
    partition = build_partition(problem.layout, 'whole_model')
    with pytest.raises(DimensionError):
        task_gradients(problem, np.zeros(3), partition)


def test_multiplicities_scale_gradients():
    problem = QuadraticProblem([QuadraticTask.diagonal('a', [1.0, 0.0], [1.0, 1.0]),
                                QuadraticTask.diagonal('b', [0.0, 1.0], [1.0, 1.0])])
    partition = build_partition(problem.layout, 'whole_model')
    a = problem.tasks[0]
    grads = task_gradients(problem, np.zeros(2), partition, tasks=[a], multiplicities={a: 3})
    assert list(grads.per_task) == [a]
    assert np.array_equal(grads.per_task[a]['whole_model'].values, [-3.0, 0.0])


def test_optimum_and_lipschitz():
    problem = QuadraticProblem([QuadraticTask.diagonal('a', [1.0, 0.0], [1.0, 3.0]),
                                QuadraticTask.diagonal('b', [0.0, 2.0], [2.0, 1.0])])
    theta, loss = problem.optimum()
    joint = sum(problem.task_gradient(t.id, theta) for t in problem.tasks)
    assert np.allclose(joint, 0.0, atol=1e-12)
    assert np.allclose(theta, [1 / 3, 0.5])
    assert loss == pytest.approx(problem.joint_loss(theta))
    assert problem.lipschitz_constant() == pytest.approx(4.0)


def family_gradients(spec):
    problem = build_family_problem(spec)
    partition = build_partition(problem.layout, 'whole_model')
    grads = task_gradients(problem, np.zeros(problem.dimension), partition)
    return problem, {task: grads.per_task[task]['whole_model'] for task in problem.tasks}


def test_noiseless_family_members_are_parallel():
    problem, grads = family_gradients(FamilySpec(num_families=2, tasks_per_family=2,
                                                 within_family_noise=0.0))
    families = problem.families
    for i in problem.tasks:
        for j in problem.tasks:
            if i != j and families[i] == families[j]:
                assert cosine(grads[i], grads[j]).value == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_families():
    problem, grads = family_gradients(FamilySpec(num_families=3, tasks_per_family=2,
                                                 within_family_noise=0.0,
                                                 cross_family_angle=90.0))
    families = problem.families
    for i in problem.tasks:
        for j in problem.tasks:
            if families[i] != families[j]:
                assert abs(cosine(grads[i], grads[j]).value) < 1e-10


def test_family_construction_is_seeded_and_recorded():
    spec = FamilySpec(seed=4)
    first, second = build_family_problem(spec), build_family_problem(spec)
    for a, b in zip(first.quadratics, second.quadratics):
        assert np.array_equal(a.center, b.center)
    assert first.describe()['construction']['seed'] == 4
    assert {entry['family'] for entry in first.describe()['tasks']} == {
        'family_0', 'family_1', 'family_2'}
    other = build_family_problem(FamilySpec(seed=5))
    assert not np.array_equal(first.quadratics[0].center, other.quadratics[0].center)


@pytest.mark.parametrize('changes', [
    {'num_families': 1}, {'tasks_per_family': 1}, {'dimension': 3},
    {'cross_family_angle': 120.0}, {'within_family_noise': -0.1}, {'task_sizes': (1.0,)},
])
def test_invalid_family_spec(changes):
    with pytest.raises(ConfigurationError):
        build_family_problem(FamilySpec(**changes))


def test_conflict_benchmark_shape():
    problem = build_conflict_benchmark(seed=2)
    a, b = problem.quadratics[0], problem.quadratics[1]
    assert np.array_equal(a.center, -b.center)
    assert np.array_equal(a.curvature, b.curvature)
    assert len(problem.tasks) == 4


def test_layered_granularities():
    model = LayeredLinearModel(layer_dims=(4, 6, 5, 3))
    assert build_partition(model.layout, 'whole_model').names == ['whole_model']
    assert build_partition(model.layout, 'all_layer').names == ['layer_0', 'layer_1', 'layer_2']
    assert build_partition(model.layout, 'enc_dec').names == ['encoder', 'decoder']
    assert len(build_partition(model.layout, 'all_matrix').names) == 6
    for granularity in ('whole_model', 'enc_dec', 'all_layer', 'all_matrix'):
        partition = build_partition(model.layout, granularity)
        theta = model.initial_point()
        assert np.array_equal(partition.assemble(partition.extract(theta)), theta)


def test_restrict_keeps_tasks_start_and_blocks():
    problem = build_family_problem(FamilySpec(seed=2, blocks=4))
    pair = problem.restrict(['f1_t2', 'f0_t0'], name='pair')
    assert [task.name for task in pair.tasks] == ['f1_t2', 'f0_t0']
    assert pair.name == 'pair'
    assert len(pair.layout.tensors) == 4
    assert np.array_equal(pair.initial_point(), problem.initial_point())

    theta = np.linspace(-1.0, 1.0, problem.dimension)
    names = [task.name for task in problem.tasks]
    assert pair.task_loss(0, theta) == problem.task_loss(names.index('f1_t2'), theta)
    assert np.array_equal(pair.task_gradient(1, theta),
                          problem.task_gradient(names.index('f0_t0'), theta))

    with pytest.raises(ConfigurationError):
        problem.restrict(['f0_t0', 'nobody'])
    with pytest.raises(ConfigurationError):
        problem.restrict(['f0_t0', 'f0_t0'])
