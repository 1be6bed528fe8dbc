# planner/experiment.py

"""Experiment and combine configuration loading.

Files are JSON (YAML when the suffix says so). Values are merged over
resources/defaults.yaml section by section and validated before anything
runs; every schema error carries the file and line it refers to.
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from core.engine import MODES, VaccineConfig
from core.errors import ConfigurationError, ValidationError
from core.rng import derive_seeds
from core.sampler import SamplerConfig
from suite.problems import (FamilySpec, LayeredLinearModel, QuadraticProblem, QuadraticTask,
                            SyntheticProblem, build_conflict_benchmark, build_family_problem)
from suite.trainer import TrainConfig

SPEC_VERSION = 1
DEFAULTS_FILE = Path(__file__).resolve().parent.parent / 'resources' / 'defaults.yaml'
PROBLEM_KINDS = ('family', 'quadratic', 'layered', 'conflict_benchmark')
SEED_CONSUMERS = ('problem', 'vaccine', 'sampler')

KeyPath = Tuple[Any, ...]

_NUMBER = 'number'
_INTEGER = 'integer'
_BOOL = 'boolean'
_STRING = 'string'
_LIST = 'list'

VACCINE_FIELDS = {
    'mode': _STRING, 'fixed_target': _NUMBER, 'task_subset': _STRING,
    'subset_tasks': _LIST, 'resource_threshold': _NUMBER, 'beta': _NUMBER,
    'preserve_norm': _BOOL, 'norm_tolerance': _NUMBER, 'target_clamp': _NUMBER,
    'update_ema': _BOOL, 'reference': _STRING,
}
TRAIN_FIELDS = {
    'step_size': _NUMBER, 'max_steps': _INTEGER, 'granularity': _STRING,
    'record_every': _INTEGER, 'record_similarities': _BOOL, 'keep_snapshots': _BOOL,
    'divergence_threshold': _NUMBER, 'grad_tolerance': _NUMBER,
}
SAMPLER_FIELDS = {'temperature': _NUMBER, 'batch_tasks': _INTEGER}
PAIRING_FIELDS = {'anchor': _STRING, 'partners': _LIST}
PROBLEM_FIELDS = {
    'family': {'kind': _STRING, 'num_families': _INTEGER, 'tasks_per_family': _INTEGER,
               'dimension': _INTEGER, 'cross_family_angle': _NUMBER,
               'within_family_noise': _NUMBER, 'curvature_spread': _NUMBER,
               'radius': _NUMBER, 'blocks': _INTEGER, 'seed': _INTEGER,
               'task_sizes': _LIST},
    'quadratic': {'kind': _STRING, 'tasks': _LIST, 'blocks': _INTEGER, 'initial': _LIST},
    'layered': {'kind': _STRING, 'layer_dims': _LIST, 'num_tasks': _INTEGER,
                'samples': _INTEGER, 'task_similarity': _NUMBER, 'seed': _INTEGER},
    'conflict_benchmark': {'kind': _STRING, 'dimension': _INTEGER, 'seed': _INTEGER},
}
TOP_LEVEL_FIELDS = ('spec_version', 'seed', 'problem', 'sampler', 'vaccine', 'train', 'modes',
                    'pairing')


def _matches(value: Any, kind: str) -> bool:
    if value is None:
        return True
    if kind == _BOOL:
        return isinstance(value, bool)
    if kind == _INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _NUMBER:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == _STRING:
        return isinstance(value, str)
    return isinstance(value, list)


def _line_index(text: str) -> Dict[KeyPath, int]:
    """Map key paths to 1-based source lines using the YAML node tree."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: Dict[KeyPath, int] = {}

    def walk(node, path: KeyPath):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                lines[path + (key.value,)] = key.start_mark.line + 1
                walk(value, path + (key.value,))
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                walk(item, path + (index,))

    if root is not None:
        walk(root, ())
    return lines


@dataclass
class ConfigSource:
    """Parsed document plus what is needed to anchor errors in it."""
    path: str
    data: Dict
    lines: Dict[KeyPath, int] = field(default_factory=dict)

    def line(self, path: KeyPath) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def error(self, message: str, path: KeyPath = ()) -> ConfigurationError:
        return ConfigurationError(message, self.path, self.line(path))

    def check_fields(self, section: Dict, schema: Dict[str, str], path: KeyPath):
        if not isinstance(section, dict):
            raise self.error(f"'{'.'.join(map(str, path))}' must be an object", path)
        for key, value in section.items():
            if key not in schema:
                raise self.error(f"Unknown key '{key}' in '{'.'.join(map(str, path))}'",
                                 path + (key,))
            if not _matches(value, schema[key]):
                raise self.error(f"'{key}' must be a {schema[key]}, got {value!r}",
                                 path + (key,))


def read_config(path: str) -> ConfigSource:
    """Parse a JSON or YAML configuration file."""
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigurationError("File not found", str(path))
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise ConfigurationError(f"File is not valid UTF-8: {e.reason} at byte {e.start}",
                                 str(path))
    except OSError as e:
        raise ConfigurationError(f"Cannot read file: {e.strerror}", str(path))

    if file_path.suffix.lower() in ('.yaml', '.yml'):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise ConfigurationError(f"Invalid YAML: {e}", str(path),
                                     mark.line + 1 if mark else None)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON: {e.msg}", str(path), e.lineno)

    source = ConfigSource(str(path), data, _line_index(text))
    if not isinstance(data, dict):
        raise source.error("Top level must be an object")
    return source


def config_hash(config: Dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class Experiment:
    """A validated experiment ready to run."""
    source: str
    seed: int
    seeds: Dict[str, int]
    problem: SyntheticProblem
    train: TrainConfig
    modes: List[str]
    config: Dict
    config_hash: str
    pairing: Optional[Dict] = None


@dataclass
class CombineSettings:
    """Validated combine configuration; subset task names resolve against a dump."""
    source: ConfigSource
    vaccine: Dict
    seed: int = 0

    def vaccine_config(self, task_names: Sequence[str]) -> VaccineConfig:
        return _build_vaccine(self.source, self.vaccine, task_names, ('vaccine',), self.seed)


def _build_vaccine(source: ConfigSource, section: Dict, task_names: Sequence[str],
                   path: KeyPath, seed: Optional[int] = None) -> VaccineConfig:
    values = {key: value for key, value in section.items() if value is not None}
    names = values.pop('subset_tasks', [])
    index = {name: i for i, name in enumerate(task_names)}
    unknown = [name for name in names if name not in index]
    if unknown:
        raise source.error(f"subset_tasks names unknown tasks {unknown}",
                           path + ('subset_tasks',))
    values['subset_tasks'] = tuple(index[name] for name in names)
    if seed is not None:
        values['seed'] = seed
    try:
        return VaccineConfig(**values)
    except ValidationError as e:
        raise source.error(str(e), path)


class ExperimentPlanner:
    """Loads defaults and turns configuration files into runnable objects."""

    def __init__(self, defaults_file: Optional[str] = None):
        self.defaults_file = str(defaults_file or DEFAULTS_FILE)
        self.logger = logging.getLogger('gradvac.planner')
        self.defaults: Optional[Dict] = None

    def load_defaults(self) -> Dict:
        """Load default configuration values."""
        if self.defaults is not None:
            return self.defaults
        try:
            with open(self.defaults_file, 'r', encoding='utf-8') as f:
                defaults = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            self.logger.error(f"Error loading defaults file: {e}")
            raise ConfigurationError(f"Cannot load defaults: {e}", self.defaults_file)

        required_keys = ['version', 'problem', 'sampler', 'vaccine', 'train']
        for key in required_keys:
            if not isinstance(defaults, dict) or key not in defaults:
                raise ConfigurationError(f"Missing required key in defaults: {key}",
                                         self.defaults_file)
        self.defaults = defaults
        return defaults

    def _merged(self, source: ConfigSource, name: str) -> Dict:
        section = source.data.get(name)
        if section is None:
            section = {}
        source.check_fields(section, self._schema(name, section, source), (name,))
        merged = copy.deepcopy(self.load_defaults()[name]) or {}
        if name == 'problem':
            kind = section.get('kind', merged.get('kind'))
            merged = {'kind': kind,
                      **copy.deepcopy(self.load_defaults().get('problems', {}).get(kind, {}))}
        merged.update(section)
        return merged

    @staticmethod
    def _schema(name: str, section: Dict, source: ConfigSource) -> Dict[str, str]:
        if name == 'vaccine':
            return VACCINE_FIELDS
        if name == 'train':
            return TRAIN_FIELDS
        if name == 'sampler':
            return SAMPLER_FIELDS
        kind = section.get('kind', 'family')
        if kind not in PROBLEM_FIELDS:
            raise source.error(f"Unknown problem kind '{kind}', expected one of {PROBLEM_KINDS}",
                               ('problem', 'kind'))
        return PROBLEM_FIELDS[kind]

    def load_experiment(self, path: str, seed_override: Optional[int] = None,
                        mode_override: Optional[str] = None) -> Experiment:
        """Validate an experiment file and build its problem and train config."""
        source = read_config(path)
        data = source.data
        for key in data:
            if key not in TOP_LEVEL_FIELDS:
                raise source.error(f"Unknown top-level key '{key}'", (key,))

        version = data.get('spec_version')
        if version != SPEC_VERSION:
            raise source.error(f"Unsupported spec_version {version!r}, expected {SPEC_VERSION}",
                               ('spec_version',))
        seed = data.get('seed', 0) if seed_override is None else seed_override
        if not _matches(seed, _INTEGER) or seed is None or seed < 0:
            raise source.error(f"seed must be a non-negative integer, got {seed!r}", ('seed',))

        config = {'spec_version': SPEC_VERSION, 'seed': seed}
        for name in ('problem', 'sampler', 'vaccine', 'train'):
            config[name] = self._merged(source, name)

        modes = data.get('modes') or [config['vaccine'].get('mode', 'gradvac')]
        if mode_override is not None:
            config['vaccine']['mode'] = mode_override
            modes = [mode_override]
        if not isinstance(modes, list) or any(m not in MODES for m in modes):
            raise source.error(f"modes must be a list drawn from {MODES}, got {modes!r}",
                               ('modes',))
        if len(set(modes)) != len(modes):
            raise source.error(f"modes contains duplicates: {modes}", ('modes',))
        config['modes'] = list(modes)

        seeds = derive_seeds(seed, SEED_CONSUMERS)
        problem = self._build_problem(source, config['problem'], seeds['problem'])
        task_names = [task.name for task in problem.tasks]
        vaccine = _build_vaccine(source, config['vaccine'], task_names, ('vaccine',),
                                 seeds['vaccine'])
        for mode in modes:
            try:
                vaccine.with_overrides(mode=mode)
            except ValidationError as e:
                raise source.error(str(e), ('modes',))

        sampler = None
        batch_tasks = config['sampler'].get('batch_tasks')
        if batch_tasks is not None:
            try:
                sampler = SamplerConfig(problem.task_sizes,
                                        config['sampler'].get('temperature', 1.0),
                                        seeds['sampler'])
            except ValidationError as e:
                raise source.error(str(e), ('sampler',))

        train_values = {k: v for k, v in config['train'].items() if v is not None}
        try:
            train = TrainConfig(vaccine=vaccine, sampler=sampler, batch_tasks=batch_tasks,
                                **train_values)
        except TypeError as e:
            raise source.error(f"Incomplete train section: {e}", ('train',))
        except ValidationError as e:
            raise source.error(str(e), ('train',))

        pairing = self._build_pairing(source, data.get('pairing'), problem)
        if pairing is not None:
            config['pairing'] = pairing

        digest = config_hash(config)
        self.logger.info(f"Loaded experiment {path}: problem '{problem.name}', "
                         f"modes {modes}, seed {seed}, config hash {digest[:12]}")
        return Experiment(str(path), seed, seeds, problem, train, list(modes), config, digest,
                          pairing)

    @staticmethod
    def _build_pairing(source: ConfigSource, section: Optional[Dict],
                       problem: SyntheticProblem) -> Optional[Dict]:
        """Anchor and partner names for the two-task pairing runs."""
        if section is None:
            return None
        path = ('pairing',)
        source.check_fields(section, PAIRING_FIELDS, path)
        if not isinstance(problem, QuadraticProblem):
            raise source.error(f"pairing needs a quadratic problem, got '{problem.name}'", path)
        names = [task.name for task in problem.tasks]
        anchor = section.get('anchor')
        if anchor not in names:
            raise source.error(f"pairing anchor must name a task of the problem, got {anchor!r}",
                               path + ('anchor',))
        partners = section.get('partners')
        if partners is not None:
            unknown = [p for p in partners if p not in names]
            if unknown or not partners:
                raise source.error(f"pairing partners must name tasks of the problem, "
                                   f"got {partners!r}", path + ('partners',))
            if anchor in partners or len(set(partners)) != len(partners):
                raise source.error("pairing partners must be distinct and exclude the anchor",
                                   path + ('partners',))
            partners = list(partners)
        return {'anchor': anchor, 'partners': partners}

    def _build_problem(self, source: ConfigSource, section: Dict,
                       derived_seed: int) -> SyntheticProblem:
        kind = section.get('kind')
        path = ('problem',)
        values = {k: v for k, v in section.items() if k != 'kind' and v is not None}
        try:
            if kind == 'family':
                values.setdefault('seed', derived_seed)
                if 'task_sizes' in values:
                    values['task_sizes'] = tuple(float(s) for s in values['task_sizes'])
                return build_family_problem(FamilySpec(**values))
            if kind == 'layered':
                values.setdefault('seed', derived_seed)
                return LayeredLinearModel(**values)
            if kind == 'conflict_benchmark':
                return build_conflict_benchmark(values.get('seed', derived_seed),
                                                values.get('dimension', 8))
            return self._build_quadratic(source, values)
        except ValidationError as e:
            if isinstance(e, ConfigurationError) and e.source:
                raise
            raise source.error(str(e), path)
        except (TypeError, ValueError) as e:
            raise source.error(f"Invalid problem definition: {e}", path)

    @staticmethod
    def _build_quadratic(source: ConfigSource, values: Dict) -> QuadraticProblem:
        entries = values.get('tasks') or []
        if not entries:
            raise source.error("Quadratic problem needs a non-empty 'tasks' list",
                               ('problem', 'tasks'))
        tasks = []
        for index, entry in enumerate(entries):
            path = ('problem', 'tasks', index)
            if not isinstance(entry, dict) or 'center' not in entry:
                raise source.error("Each quadratic task needs a 'center'", path)
            name = entry.get('name', f'task_{index}')
            size = entry.get('size', 1.0)
            if 'factor' in entry:
                tasks.append(QuadraticTask(name, entry['center'], entry['factor'], size))
            else:
                curvature = entry.get('curvature', [1.0] * len(entry['center']))
                tasks.append(QuadraticTask.diagonal(name, entry['center'], curvature, size))
        return QuadraticProblem(tasks, blocks=values.get('blocks', 1),
                                initial=values.get('initial'))

    def load_combine_config(self, path: str, mode_override: Optional[str] = None,
                            seed_override: Optional[int] = None) -> CombineSettings:
        """Validate a combine configuration: spec_version, optional seed, vaccine section."""
        source = read_config(path)
        for key in source.data:
            if key not in ('spec_version', 'seed', 'vaccine'):
                raise source.error(f"Unknown top-level key '{key}'", (key,))
        version = source.data.get('spec_version')
        if version != SPEC_VERSION:
            raise source.error(f"Unsupported spec_version {version!r}, expected {SPEC_VERSION}",
                               ('spec_version',))
        section = self._merged(source, 'vaccine')
        if mode_override is not None:
            section['mode'] = mode_override
        seed = source.data.get('seed', 0) if seed_override is None else seed_override
        if not _matches(seed, _INTEGER) or seed is None or seed < 0:
            raise source.error(f"seed must be a non-negative integer, got {seed!r}", ('seed',))
        settings = CombineSettings(source, section, seed)
        # Subset names are checked once the dump is known; everything else now.
        draft = dict(section, subset_tasks=[])
        if draft.get('task_subset') == 'explicit':
            draft['task_subset'] = 'all_task'
        _build_vaccine(source, draft, [], ('vaccine',), seed)
        return settings
