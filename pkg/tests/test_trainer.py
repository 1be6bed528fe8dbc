# tests/test_trainer.py

import numpy as np
import pytest

from analyzers.activity_analyzer import ActivityAnalyzer
from analyzers.clustering_analyzer import clustering_score
from analyzers.pairing_analyzer import similarity_quality_correlation
from analyzers.similarity_analyzer import aggregate_over_steps
from core.engine import VaccineConfig
from core.errors import ConfigurationError, DivergenceError
from core.sampler import SamplerConfig
from suite.problems import (FamilySpec, LayeredLinearModel, QuadraticProblem, QuadraticTask,
                            build_conflict_benchmark, build_family_problem)
from suite.trainer import (TrainConfig, compare_modes, descent_violations, pairing_sweep,
                           step_size_bound, train)

PANEL_SEEDS = range(10)


def two_identical_tasks():
    return QuadraticProblem([QuadraticTask.diagonal('a', [1.0, -1.0], [1.0, 2.0]),
                             QuadraticTask.diagonal('b', [1.0, -1.0], [1.0, 2.0])],
                            initial=[3.0, 3.0])


def shared_center_pair():
    # Tasks agree on the fast coordinates and disagree on the slow ones, so the
    # observed similarity falls during training and the moving targets lag above it.
    center = [1.0, -2.0, 0.5, 3.0]
    return QuadraticProblem([QuadraticTask.diagonal('first', center, [2.0, 2.5, 1.0, 0.25]),
                             QuadraticTask.diagonal('second', center, [2.5, 2.0, 0.25, 1.0])],
                            initial=[6.0, 3.0, 1.5, 4.0])


def test_step_size_bound():
    assert step_size_bound(2.0, 0.0) == pytest.approx(0.5)
    assert step_size_bound(1.0, 1.0) == pytest.approx(1.0)
    assert step_size_bound(1.0, 2.0) == pytest.approx(0.4)
    with pytest.raises(ConfigurationError):
        step_size_bound(0.0, 1.0)


def test_sum_baseline_decreases_strictly():
    run = train(two_identical_tasks(), TrainConfig(
        step_size=0.05, max_steps=200, vaccine=VaccineConfig(mode='sum_baseline')))
    losses = np.array(run.joint_losses)
    assert np.all(np.diff(losses) < 0)
    assert losses[-1] < 1e-10
    assert len(run.joint_losses) == run.steps + 1 == 201


def test_convex_descent_guarantee():
    problem = shared_center_pair()
    lipschitz = problem.lipschitz_constant()
    cfg = TrainConfig(step_size=0.05 / lipschitz, max_steps=5000,
                      vaccine=VaccineConfig(mode='gradvac', beta=0.1, seed=3))
    run = train(problem, cfg)

    assert run.fired_total() > 0
    assert not run.precondition_violated
    assert cfg.step_size < step_size_bound(lipschitz, run.max_theorem_a)
    assert descent_violations(run, lipschitz) == []
    assert np.all(np.diff(run.joint_losses) <= 1e-15)
    _, optimum = problem.optimum()
    assert abs(run.final_loss - optimum) < 1e-6


def test_runs_are_reproducible():
    problem = build_family_problem(FamilySpec(seed=1))
    cfg = TrainConfig(step_size=0.05, max_steps=40, vaccine=VaccineConfig(seed=5))
    first, second = train(problem, cfg), train(problem, cfg)
    assert first.joint_losses == second.joint_losses
    assert [r.to_dict() for r in first.reports] == [r.to_dict() for r in second.reports]
    assert np.array_equal(first.final_theta, second.final_theta)


def test_recording_does_not_perturb_training():
    problem = build_family_problem(FamilySpec(seed=2))
    base = TrainConfig(step_size=0.05, max_steps=30, vaccine=VaccineConfig(seed=1))
    recorded = train(problem, base)
    silent = train(problem, TrainConfig(step_size=0.05, max_steps=30,
                                        vaccine=VaccineConfig(seed=1),
                                        record_similarities=False))
    assert recorded.joint_losses == silent.joint_losses
    assert recorded.ema.values == silent.ema.values
    assert len(recorded.similarity_records) == 30
    assert silent.similarity_records == []


def test_divergence_aborts():
    cfg = TrainConfig(step_size=5.0, max_steps=100, vaccine=VaccineConfig(mode='sum_baseline'))
    with pytest.raises(DivergenceError) as info:
        train(two_identical_tasks(), cfg)
    assert info.value.step > 0


def test_grad_tolerance_stops_early():
    cfg = TrainConfig(step_size=0.1, max_steps=5000, grad_tolerance=1e-8,
                      vaccine=VaccineConfig(mode='sum_baseline'))
    run = train(two_identical_tasks(), cfg)
    assert run.stopped_early
    assert run.steps < 5000
    run.check_consistency()


def test_family_clustering_margin_is_positive_for_every_seed():
    margins = []
    for seed in PANEL_SEEDS:
        problem = build_family_problem(FamilySpec(seed=seed))
        run = train(problem, TrainConfig(step_size=0.05, max_steps=100,
                                         vaccine=VaccineConfig(seed=seed)))
        score = clustering_score(aggregate_over_steps(run.similarity_records), problem.families)
        margins.append(score.margin)
    assert all(margin > 0 for margin in margins), margins


def test_activity_dominance_on_aligned_families():
    problem = build_family_problem(FamilySpec(cross_family_angle=30.0,
                                              within_family_noise=0.05, seed=6))
    cfg = TrainConfig(step_size=1e-5, max_steps=1000, record_similarities=False,
                      vaccine=VaccineConfig(seed=6))
    runs = compare_modes(problem, cfg, modes=('pcgrad', 'gradvac'))

    for report in runs['pcgrad'].reports:
        for entry in report.entries:
            assert entry.observed_phi > 0
    assert runs['pcgrad'].fired_total() == 0

    analysis = ActivityAnalyzer().analyze(runs['pcgrad'].reports + runs['gradvac'].reports)
    assert analysis.success
    assert analysis.counts.series['pcgrad'].total == 0
    gradvac = analysis.counts.series['gradvac']
    assert gradvac.total == sum(r.recount_fired() for r in runs['gradvac'].reports)
    assert gradvac.consistent
    assert analysis.inconsistent_steps == {}


def test_sum_baseline_reaches_joint_optimum_on_conflict_benchmark():
    for seed in PANEL_SEEDS:
        problem = build_conflict_benchmark(seed)
        _, optimum = problem.optimum()
        runs = compare_modes(problem, TrainConfig(step_size=0.03, max_steps=1000,
                                                  record_similarities=False,
                                                  vaccine=VaccineConfig(seed=seed)))
        baseline = runs['sum_baseline'].final_loss
        assert abs(baseline - optimum) < 1e-9
        for mode in ('pcgrad', 'gradvac'):
            assert np.isfinite(runs[mode].final_loss)
            assert runs[mode].final_loss >= baseline - 1e-9
        assert runs['gradvac'].final_loss <= runs['pcgrad'].final_loss + 1e-9, seed


def test_sampled_training_is_reproducible():
    model = LayeredLinearModel(layer_dims=(4, 6, 3), num_tasks=4, seed=3)
    sampler = SamplerConfig(model.task_sizes, temperature=5.0, seed=12)
    cfg = TrainConfig(step_size=0.01, max_steps=25, granularity='all_layer',
                      sampler=sampler, batch_tasks=3, vaccine=VaccineConfig(seed=4))
    first, second = train(model, cfg), train(model, cfg)
    assert first.joint_losses == second.joint_losses
    assert set(first.similarity_records[0].matrices) == {'layer_0', 'layer_1'}


def test_invalid_train_config():
    with pytest.raises(ConfigurationError):
        TrainConfig(step_size=0.0, max_steps=10)
    with pytest.raises(ConfigurationError):
        TrainConfig(step_size=0.1, max_steps=10, granularity='per_head')
    with pytest.raises(ConfigurationError):
        TrainConfig(step_size=0.1, max_steps=10,
                    sampler=SamplerConfig({next(iter(two_identical_tasks().task_sizes)): 1.0}))


def distinct_center_pair():
    # Centers differ along a fast coordinate, so the tasks trade off at the joint
    # optimum; the slow coordinates keep their gradients positively aligned early on.
    return QuadraticProblem([
        QuadraticTask.diagonal('first', [1.02, -2.0, 0.5, 3.0], [2.0, 2.5, 1.0, 0.25]),
        QuadraticTask.diagonal('second', [0.98, -2.0, 0.5, 3.0], [2.5, 2.0, 0.25, 1.0])],
        initial=[6.0, 3.0, 1.5, 4.0])


def test_descent_guarantee_with_distinct_centers():
    problem = distinct_center_pair()
    optimum_theta, optimum = problem.optimum()
    assert all(loss > 0 for loss in problem.task_losses(optimum_theta))

    lipschitz = problem.lipschitz_constant()
    cfg = TrainConfig(step_size=0.02 / lipschitz, max_steps=300,
                      vaccine=VaccineConfig(mode='gradvac', beta=0.1, seed=3))
    run = train(problem, cfg)

    assert all(entry.observed_phi > 0 for report in run.reports for entry in report.entries)
    assert run.fired_total() > 0
    assert not run.precondition_violated
    assert cfg.step_size < step_size_bound(lipschitz, run.max_theorem_a)
    assert descent_violations(run, lipschitz) == []
    assert np.all(np.diff(run.joint_losses) < 0)
    assert run.final_loss > optimum


def anti_correlated_pair():
    return QuadraticProblem([QuadraticTask.diagonal('plus', [1.0, 0.0], [1.0, 1.0]),
                             QuadraticTask.diagonal('minus', [-1.0, 0.0], [1.0, 1.0])],
                            initial=[0.0, 3.0])


def test_anti_correlated_pair_surgery_reaches_lower_loss_at_equal_steps():
    runs = compare_modes(anti_correlated_pair(),
                         TrainConfig(step_size=0.05, max_steps=20,
                                     vaccine=VaccineConfig(beta=0.1, seed=0)))
    baseline = runs['sum_baseline'].final_loss
    assert runs['pcgrad'].fired_total() > 0
    assert runs['pcgrad'].final_loss < baseline
    assert runs['gradvac'].final_loss <= baseline + 1e-12
    for run in runs.values():
        assert run.steps == 20


def test_snapshots_follow_the_trajectory():
    problem = two_identical_tasks()
    cfg = TrainConfig(step_size=0.05, max_steps=12, keep_snapshots=True,
                      vaccine=VaccineConfig(mode='sum_baseline'))
    run = train(problem, cfg)
    assert len(run.snapshots) == run.steps + 1
    assert np.array_equal(run.snapshots[0], problem.initial_point())
    assert np.array_equal(run.snapshots[-1], run.final_theta)
    assert [problem.joint_loss(theta) for theta in run.snapshots] == run.joint_losses

    silent = train(problem, TrainConfig(step_size=0.05, max_steps=12,
                                        vaccine=VaccineConfig(mode='sum_baseline')))
    assert silent.snapshots == []


def test_distinct_tasks_per_step():
    model = LayeredLinearModel(layer_dims=(4, 6, 3), num_tasks=4, seed=3)
    sampler = SamplerConfig(model.task_sizes, temperature=5.0, seed=12)
    cfg = TrainConfig(step_size=0.01, max_steps=25, sampler=sampler, batch_tasks=3,
                      vaccine=VaccineConfig(seed=4))
    run = train(model, cfg)
    assert len(run.distinct_tasks) == run.steps
    assert all(1 <= count <= 3 for count in run.distinct_tasks)
    assert run.distinct_tasks == [len(r.tasks) for r in run.similarity_records]

    full = train(model, TrainConfig(step_size=0.01, max_steps=5, vaccine=VaccineConfig()))
    assert full.distinct_tasks == [4] * 5


def test_pairing_favours_partners_from_the_same_family():
    problem = build_family_problem(FamilySpec(seed=4))
    cfg = TrainConfig(step_size=0.1, max_steps=60, record_similarities=False,
                      vaccine=VaccineConfig(mode='sum_baseline'))
    outcomes = pairing_sweep(problem, cfg, 'f0_t0')

    assert [o.partner for o in outcomes] == [t.name for t in problem.tasks][1:]
    same = [o for o in outcomes if o.partner.startswith('f0_')]
    other = [o for o in outcomes if not o.partner.startswith('f0_')]
    assert len(same) == 2 and len(other) == 6
    assert min(o.mean_cosine for o in same) > max(o.mean_cosine for o in other)
    assert max(o.anchor_loss for o in same) < min(o.anchor_loss for o in other)
    assert all(o.steps == 60 for o in outcomes)

    correlation = similarity_quality_correlation([o.mean_cosine for o in outcomes],
                                                 [o.anchor_loss for o in outcomes])
    assert correlation > 0


def test_pairing_rejects_bad_arguments():
    problem = build_family_problem(FamilySpec(seed=4))
    cfg = TrainConfig(step_size=0.1, max_steps=5)
    with pytest.raises(ConfigurationError):
        pairing_sweep(problem, cfg, 'nobody')
    with pytest.raises(ConfigurationError):
        pairing_sweep(problem, cfg, 'f0_t0', ['f0_t0'])
    with pytest.raises(ConfigurationError):
        pairing_sweep(LayeredLinearModel(), cfg, 'task_0')
