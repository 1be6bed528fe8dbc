# tests/test_planner.py

import json
from pathlib import Path

import pytest

from core.errors import ConfigurationError
from planner.experiment import ExperimentPlanner, config_hash
from suite.problems import LayeredLinearModel, QuadraticProblem

EXPERIMENTS = Path(__file__).resolve().parent.parent / 'resources' / 'experiments'


def write(path, text):
    path.write_text(text, encoding='utf-8')
    return str(path)


@pytest.mark.parametrize('name', ['family_clustering.json', 'two_quadratics.json',
                                  'conflict_sweep.json', 'layered_sampling.json',
                                  'family_pairing.json'])
def test_bundled_experiments_load(name):
    experiment = ExperimentPlanner().load_experiment(str(EXPERIMENTS / name))
    assert experiment.modes
    assert experiment.config_hash == config_hash(experiment.config)
    assert set(experiment.seeds) == {'problem', 'vaccine', 'sampler'}


def test_bundled_combine_config_loads():
    settings = ExperimentPlanner().load_combine_config(str(EXPERIMENTS / 'combine_gradvac.json'))
    cfg = settings.vaccine_config(['a', 'b'])
    assert cfg.mode == 'gradvac'
    assert cfg.beta == 0.01


def test_defaults_fill_missing_sections():
    experiment = ExperimentPlanner().load_experiment(str(EXPERIMENTS / 'two_quadratics.json'))
    assert isinstance(experiment.problem, QuadraticProblem)
    assert experiment.train.granularity == 'whole_model'
    assert experiment.train.vaccine.beta == 0.1
    assert experiment.train.vaccine.target_clamp == 0.99
    assert experiment.train.sampler is None
    assert experiment.modes == ['gradvac']


def test_layered_experiment_samples_tasks():
    experiment = ExperimentPlanner().load_experiment(str(EXPERIMENTS / 'layered_sampling.json'))
    assert isinstance(experiment.problem, LayeredLinearModel)
    assert experiment.train.batch_tasks == 3
    assert experiment.train.sampler.seed == experiment.seeds['sampler']


def test_seed_override_changes_hash_and_seeds():
    planner = ExperimentPlanner()
    path = str(EXPERIMENTS / 'family_clustering.json')
    base = planner.load_experiment(path)
    again = planner.load_experiment(path)
    other = planner.load_experiment(path, seed_override=8)
    assert base.config_hash == again.config_hash
    assert other.seed == 8
    assert other.config_hash != base.config_hash
    assert other.seeds != base.seeds


def test_mode_override():
    experiment = ExperimentPlanner().load_experiment(str(EXPERIMENTS / 'conflict_sweep.json'),
                                                     mode_override='pcgrad')
    assert experiment.modes == ['pcgrad']
    assert experiment.train.vaccine.mode == 'pcgrad'


def test_yaml_experiment(tmp_path):
    path = write(tmp_path / 'run.yaml',
                 'spec_version: 1\n'
                 'seed: 2\n'
                 'problem:\n'
                 '  kind: conflict_benchmark\n'
                 'train:\n'
                 '  max_steps: 5\n')
    experiment = ExperimentPlanner().load_experiment(path)
    assert experiment.train.max_steps == 5
    assert len(experiment.problem.tasks) == 4


def test_wrong_type_is_anchored_to_its_line(tmp_path):
    path = write(tmp_path / 'bad.json',
                 '{\n'
                 '  "spec_version": 1,\n'
                 '  "train": {\n'
                 '    "max_steps": "ten"\n'
                 '  }\n'
                 '}\n')
    with pytest.raises(ConfigurationError) as info:
        ExperimentPlanner().load_experiment(path)
    assert info.value.line == 4
    assert str(info.value).startswith(f"{path}:4:")


def test_unknown_key_is_anchored(tmp_path):
    path = write(tmp_path / 'bad.json',
                 '{\n'
                 '  "spec_version": 1,\n'
                 '  "vaccine": {\n'
                 '    "mode": "gradvac",\n'
                 '    "momentum": 0.9\n'
                 '  }\n'
                 '}\n')
    with pytest.raises(ConfigurationError) as info:
        ExperimentPlanner().load_experiment(path)
    assert info.value.line == 5
    assert 'momentum' in str(info.value)


@pytest.mark.parametrize('document', [
    {'spec_version': 2},
    {'spec_version': 1, 'seed': -1},
    {'spec_version': 1, 'extra': True},
    {'spec_version': 1, 'modes': ['gradvac', 'adam']},
    {'spec_version': 1, 'modes': ['pcgrad', 'pcgrad']},
    {'spec_version': 1, 'problem': {'kind': 'mystery'}},
    {'spec_version': 1, 'vaccine': {'beta': 1.5}},
    {'spec_version': 1, 'vaccine': {'mode': 'fixed_target'}},
    {'spec_version': 1, 'vaccine': {'task_subset': 'explicit', 'subset_tasks': ['nobody']}},
    {'spec_version': 1, 'train': {'granularity': 'per_head'}},
    {'spec_version': 1, 'problem': {'kind': 'quadratic', 'tasks': []}},
    {'spec_version': 1, 'problem': {'kind': 'layered'}, 'pairing': {'anchor': 'task_0'}},
    {'spec_version': 1, 'pairing': {'anchor': 'nobody'}},
    {'spec_version': 1, 'pairing': {'anchor': 'f0_t0', 'partners': ['f0_t1', 'f0_t1']}},
    {'spec_version': 1, 'pairing': {'anchor': 'f0_t0', 'partners': ['f0_t0']}},
    {'spec_version': 1, 'pairing': {'anchor': 'f0_t0', 'partners': []}},
    {'spec_version': 1, 'pairing': {'anchor': 'f0_t0', 'weights': [1]}},
    {'spec_version': 1, 'train': {'keep_snapshots': 'yes'}},
])
def test_invalid_experiments(tmp_path, document):
    path = write(tmp_path / 'bad.json', json.dumps(document, indent=2))
    with pytest.raises(ConfigurationError) as info:
        ExperimentPlanner().load_experiment(path)
    assert info.value.source == path


def test_combine_config_rejects_experiment_sections(tmp_path):
    path = write(tmp_path / 'combine.json',
                 json.dumps({'spec_version': 1, 'train': {'max_steps': 3}}))
    with pytest.raises(ConfigurationError):
        ExperimentPlanner().load_combine_config(path)


def test_combine_config_resolves_subset_names(tmp_path):
    path = write(tmp_path / 'combine.json', json.dumps({
        'spec_version': 1,
        'vaccine': {'mode': 'pcgrad', 'task_subset': 'explicit', 'subset_tasks': ['fr']}}))
    settings = ExperimentPlanner().load_combine_config(path, seed_override=4)
    cfg = settings.vaccine_config(['de', 'fr'])
    assert cfg.subset_tasks == (1,)
    assert cfg.seed == 4
    with pytest.raises(ConfigurationError):
        settings.vaccine_config(['de'])


def test_defaults_missing_required_key(tmp_path):
    path = write(tmp_path / 'defaults.yaml',
                 'version: "1.0"\nproblem:\n  kind: family\nsampler: {}\nvaccine: {}\n')
    with pytest.raises(ConfigurationError) as info:
        ExperimentPlanner(defaults_file=path).load_defaults()
    assert 'train' in str(info.value)


def test_pairing_section():
    experiment = ExperimentPlanner().load_experiment(str(EXPERIMENTS / 'family_pairing.json'))
    assert experiment.pairing == {'anchor': 'f0_t0', 'partners': None}
    assert experiment.config['pairing'] == experiment.pairing
    assert experiment.modes == ['sum_baseline']

    plain = ExperimentPlanner().load_experiment(str(EXPERIMENTS / 'family_clustering.json'))
    assert plain.pairing is None


def test_pairing_partners_and_snapshots(tmp_path):
    path = write(tmp_path / 'pairs.json', json.dumps({
        'spec_version': 1,
        'train': {'keep_snapshots': True},
        'pairing': {'anchor': 'f1_t0', 'partners': ['f2_t2', 'f1_t1']}}))
    experiment = ExperimentPlanner().load_experiment(path)
    assert experiment.pairing == {'anchor': 'f1_t0', 'partners': ['f2_t2', 'f1_t1']}
    assert experiment.train.keep_snapshots


def test_file_that_is_not_utf8(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_bytes(b'{"spec_version": 1, "seed": "\xff"}')
    with pytest.raises(ConfigurationError) as info:
        ExperimentPlanner().load_experiment(str(path))
    assert info.value.source == str(path)
    assert 'not valid UTF-8' in str(info.value)
    with pytest.raises(ConfigurationError):
        ExperimentPlanner().load_combine_config(str(path))
