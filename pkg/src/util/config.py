"""Experiment configuration.

Experiments are JSON documents merged over DEFAULTS. Every field is
validated before any compute starts, and every error names the dotted
path of the offending field.
"""
import copy
import hashlib
import json
import os
from dataclasses import dataclass, replace
from typing import Any, Optional, Tuple

from src.domain.analog import CrossbarConfig
from src.domain.errors import ConfigError, ContractViolation
from src.domain.mathcore import QUANTIZER_MODES, Quantizer
from src.domain.network import ACTIVATIONS, Topology
from src.domain.trainers import HyperParams, Precisions, TrainerKind
from src.util.dataio import DATASETS, SyntheticSpec

PRESET_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'presets')

DEFAULTS = {
    'name': 'experiment',
    'trainer': 'dfa',
    'topology': {'depth': 5, 'width': 1024, 'hidden': None, 'activation': 'relu'},
    'hyperparams': {
        'learning_rate': 0.05,
        'batch_size': 128,
        'epochs': 25,
        'bp_requantize': True,
        'precisions': {'weight': None, 'activation': None, 'error': None, 'gradient': None},
    },
    'backend': {
        'kind': 'digital',
        'crossbar': {
            'subarray_rows': 128,
            'subarray_cols': 128,
            'adc_bits': 5,
            'g_min': 0.01,
            'g_max': 1.0,
            'weight_bits': 8,
            'd2d_sigma': 0.0,
            'c2c_sigma': 0.0,
            'wire_r': 0.0,
            'w_range': None,
            'range_headroom': 1.0,
            'adc_mux': 8,
        },
    },
    'costs': {'profile': 'default', 'tile_dim': 1024, 'dfa_parallelism': None},
    'dataset': {
        'name': 'fashion-mnist',
        'root': None,
        'limit_train': None,
        'limit_test': None,
        'synthetic': {
            'classes': 10,
            'features': 64,
            'samples_per_class': 50,
            'test_samples_per_class': 10,
            'std': 0.1,
            'seed': 0,
        },
    },
    'sweep': [],
    'seeds': [0],
    'workers': 1,
    'output_dir': 'runs',
    'record_wall_time': False,
    'save_checkpoint': False,
}

SCHEMA = {
    'name': 'run label used in manifests and the ledger',
    'trainer': 'bp | dfa',
    'topology.depth': 'number of weight layers N (ignored when hidden is set)',
    'topology.width': 'features per hidden layer (ignored when hidden is set)',
    'topology.hidden': 'explicit hidden widths, e.g. [256, 128]',
    'topology.activation': ' | '.join(ACTIVATIONS),
    'hyperparams.learning_rate': 'SGD step size, >= 0',
    'hyperparams.batch_size': 'samples per update, >= 1',
    'hyperparams.epochs': 'training epochs, >= 0',
    'hyperparams.bp_requantize': 're-quantize every BP delta with the error quantizer',
    'hyperparams.precisions.*': ('null | bits | {bits, range, mode, dynamic} for weight, activation, error, gradient; '
                                  'only activation defaults to dynamic'),
    'backend.kind': 'digital | analog',
    'backend.crossbar.*': 'CrossbarConfig fields; adc_bits, weight_bits and w_range accept null',
    'costs.profile': 'UnitCosts profile name under src/profiles or a path',
    'costs.tile_dim': 'tile capacity per dimension in cells',
    'costs.dfa_parallelism': 'number of DFA WGUs, null for one per layer',
    'dataset.name': ' | '.join(sorted(DATASETS)) + ' | synthetic',
    'dataset.root': 'directory holding <name>/ IDX files, default $CIMTRAIN_DATA_ROOT',
    'dataset.limit_train': 'use the first n training samples',
    'dataset.limit_test': 'use the first n test samples',
    'dataset.synthetic.*': 'synthetic blob parameters',
    'sweep': '[{parameter, values}] with a dotted path or an alias',
    'seeds': 'non-empty list of integer seeds; every grid point reuses them, so points are paired by seed',
    'workers': 'concurrent grid points',
    'output_dir': 'artifact directory',
    'record_wall_time': 'write measured wall time into history files',
    'save_checkpoint': 'write model.cimtrain after training',
}

SWEEP_ALIASES = {
    'trainer': ('trainer',),
    'depth': ('topology.depth',),
    'width': ('topology.width',),
    'activation': ('topology.activation',),
    'learning_rate': ('hyperparams.learning_rate',),
    'batch_size': ('hyperparams.batch_size',),
    'epochs': ('hyperparams.epochs',),
    'backend': ('backend.kind',),
    'subarray_size': ('backend.crossbar.subarray_rows', 'backend.crossbar.subarray_cols'),
    'adc_bits': ('backend.crossbar.adc_bits',),
    'weight_bits': ('backend.crossbar.weight_bits',),
    'c2c_sigma': ('backend.crossbar.c2c_sigma',),
    'd2d_sigma': ('backend.crossbar.d2d_sigma',),
    'wire_r': ('backend.crossbar.wire_r',),
    'weight_precision_bits': ('hyperparams.precisions.weight',),
    'activation_bits': ('hyperparams.precisions.activation',),
    'error_bits': ('hyperparams.precisions.error',),
    'gradient_bits': ('hyperparams.precisions.gradient',),
    'dfa_parallelism': ('costs.dfa_parallelism',),
    'tile_dim': ('costs.tile_dim',),
}

# Fixed ranges used when a precision gives only a bit count. Half a 4-bit
# gradient step (0.5/14) lies above typical SGD gradient entries and half a
# 5-bit step (0.5/30) below the largest ones.
QUANTIZER_RANGES = {'weight': 1.0, 'activation': 1.0, 'error': 1.0, 'gradient': 0.5}

# Paths whose value may be a whole JSON object instead of a scalar.
_OPAQUE = {'hyperparams.precisions.weight', 'hyperparams.precisions.activation',
           'hyperparams.precisions.error', 'hyperparams.precisions.gradient', 'topology.hidden'}


@dataclass(frozen=True)
class TopologyConfig:
    depth: int
    width: int
    hidden: Optional[Tuple[int, ...]]
    activation: str

    def hidden_dims(self) -> Tuple[int, ...]:
        if self.hidden is not None:
            return self.hidden
        return (self.width,) * (self.depth - 1)

    def build(self, inputs: int, classes: int) -> Topology:
        return Topology((inputs,) + self.hidden_dims() + (classes,), self.activation)


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    crossbar: CrossbarConfig


@dataclass(frozen=True)
class CostConfig:
    profile: str
    tile_dim: int
    dfa_parallelism: Optional[int]


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    root: Optional[str]
    limit_train: Optional[int]
    limit_test: Optional[int]
    synthetic: SyntheticSpec
    synthetic_test: SyntheticSpec

    @property
    def is_synthetic(self) -> bool:
        return self.name == 'synthetic'

    def shape(self) -> Tuple[int, int, int]:
        """(features, classes, training samples) without touching any file."""
        if self.is_synthetic:
            spec = self.synthetic
            samples = spec.classes * spec.samples_per_class
            return spec.features, spec.classes, min(samples, self.limit_train or samples)
        info = DATASETS[self.name]
        return info.features, info.classes, min(info.train_samples, self.limit_train or info.train_samples)


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    paths: Tuple[str, ...]
    values: Tuple[Any, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    trainer: TrainerKind
    topology: TopologyConfig
    hyperparams: HyperParams
    backend: BackendConfig
    costs: CostConfig
    dataset: DatasetConfig
    sweep: Tuple[SweepAxis, ...]
    seeds: Tuple[int, ...]
    workers: int
    output_dir: str
    record_wall_time: bool
    save_checkpoint: bool
    document: dict

    def hyperparams_for(self, seed: int) -> HyperParams:
        return replace(self.hyperparams, seed=seed)

    def with_override(self, path: str, value) -> 'ExperimentConfig':
        document = copy.deepcopy(self.document)
        _assign(document, path, value)
        return parse_config(document)

    def with_values(self, assignments) -> 'ExperimentConfig':
        document = copy.deepcopy(self.document)
        for path, value in assignments:
            _assign(document, path, value)
        return parse_config(document)

    def config_hash(self) -> str:
        return blob_hash(canonical_json(self.document))


def canonical_json(document) -> bytes:
    return json.dumps(document, sort_keys=True, separators=(',', ':')).encode('utf-8')


def blob_hash(data: bytes) -> str:
    # git-style content hash
    return hashlib.sha1(b'blob %d\0' % len(data) + data).hexdigest()


def _assign(document: dict, path: str, value):
    keys = path.split('.')
    node = document
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _lookup(document: dict, path: str):
    node = document
    for key in path.split('.'):
        if not isinstance(node, dict) or key not in node:
            raise KeyError(path)
        node = node[key]
    return node


def _merge(defaults: dict, document: dict, prefix: str) -> dict:
    if not isinstance(document, dict):
        raise ConfigError(prefix or '<document>', f'expected an object, got {type(document).__name__}')
    merged = copy.deepcopy(defaults)
    for key, value in document.items():
        path = f'{prefix}.{key}' if prefix else key
        if key not in defaults:
            raise ConfigError(path, 'unknown field')
        if isinstance(defaults[key], dict) and path not in _OPAQUE:
            merged[key] = _merge(defaults[key], value, path)
        else:
            merged[key] = value
    return merged


def _integer(value, field: str, minimum: int = None, optional: bool = False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field, f'expected an integer, got {value!r}')
    if minimum is not None and value < minimum:
        raise ConfigError(field, f'must be >= {minimum}, got {value}')
    return value


def _number(value, field: str, minimum: float = None, positive: bool = False, optional: bool = False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f'expected a number, got {value!r}')
    if positive and not value > 0:
        raise ConfigError(field, f'must be positive, got {value}')
    if minimum is not None and value < minimum:
        raise ConfigError(field, f'must be >= {minimum}, got {value}')
    return float(value)


def _boolean(value, field: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(field, f'expected true or false, got {value!r}')
    return value


def _choice(value, field: str, choices) -> str:
    if value not in choices:
        raise ConfigError(field, f'expected one of {", ".join(choices)}, got {value!r}')
    return value


def _string(value, field: str, optional: bool = False):
    if value is None and optional:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(field, f'expected a non-empty string, got {value!r}')
    return value


def _quantizer(value, field: str, kind: str) -> Optional[Quantizer]:
    if value is None:
        return None
    # Only activations scale to the tensor they quantize. Errors and gradients
    # keep a fixed grid, so entries below half a step are lost.
    dynamic_default = kind == 'activation'
    if isinstance(value, int) and not isinstance(value, bool):
        spec = {'bits': value}
    elif isinstance(value, dict):
        unknown = set(value) - {'bits', 'range', 'mode', 'dynamic'}
        if unknown:
            raise ConfigError(f'{field}.{sorted(unknown)[0]}', 'unknown field')
        spec = value
    else:
        raise ConfigError(field, f'expected null, a bit count or an object, got {value!r}')

    return Quantizer(
        bits=_integer(spec.get('bits'), f'{field}.bits', minimum=1),
        range=_number(spec.get('range', QUANTIZER_RANGES[kind]), f'{field}.range', positive=True),
        mode=_choice(spec.get('mode', 'nearest'), f'{field}.mode', QUANTIZER_MODES),
        dynamic=_boolean(spec.get('dynamic', dynamic_default), f'{field}.dynamic'),
    )


def _crossbar(doc: dict) -> CrossbarConfig:
    p = 'backend.crossbar'
    values = dict(
        subarray_rows=_integer(doc['subarray_rows'], f'{p}.subarray_rows', minimum=1),
        subarray_cols=_integer(doc['subarray_cols'], f'{p}.subarray_cols', minimum=1),
        adc_bits=_integer(doc['adc_bits'], f'{p}.adc_bits', minimum=1, optional=True),
        g_min=_number(doc['g_min'], f'{p}.g_min', positive=True),
        g_max=_number(doc['g_max'], f'{p}.g_max', positive=True),
        weight_bits=_integer(doc['weight_bits'], f'{p}.weight_bits', minimum=1, optional=True),
        d2d_sigma=_number(doc['d2d_sigma'], f'{p}.d2d_sigma', minimum=0.0),
        c2c_sigma=_number(doc['c2c_sigma'], f'{p}.c2c_sigma', minimum=0.0),
        wire_r=_number(doc['wire_r'], f'{p}.wire_r', minimum=0.0),
        w_range=_number(doc['w_range'], f'{p}.w_range', positive=True, optional=True),
        range_headroom=_number(doc['range_headroom'], f'{p}.range_headroom', positive=True),
        adc_mux=_integer(doc['adc_mux'], f'{p}.adc_mux', minimum=1),
    )
    if values['g_min'] >= values['g_max']:
        raise ConfigError(f'{p}.g_min', f'must be below g_max ({values["g_max"]})')
    return CrossbarConfig(**values)


def _topology(doc: dict) -> TopologyConfig:
    hidden = doc['hidden']
    if hidden is not None:
        if not isinstance(hidden, list):
            raise ConfigError('topology.hidden', f'expected a list of widths, got {hidden!r}')
        hidden = tuple(_integer(w, f'topology.hidden[{i}]', minimum=1) for i, w in enumerate(hidden))
    return TopologyConfig(
        depth=_integer(doc['depth'], 'topology.depth', minimum=1),
        width=_integer(doc['width'], 'topology.width', minimum=1),
        hidden=hidden,
        activation=_choice(doc['activation'], 'topology.activation', ACTIVATIONS),
    )


def _dataset(doc: dict) -> DatasetConfig:
    name = _choice(doc['name'], 'dataset.name', tuple(sorted(DATASETS)) + ('synthetic',))
    s = doc['synthetic']
    p = 'dataset.synthetic'
    common = dict(
        classes=_integer(s['classes'], f'{p}.classes', minimum=1),
        features=_integer(s['features'], f'{p}.features', minimum=1),
        std=_number(s['std'], f'{p}.std', minimum=0.0),
        seed=_integer(s['seed'], f'{p}.seed'),
    )
    if common['features'] < common['classes']:
        raise ConfigError(f'{p}.features', 'must be >= classes')
    return DatasetConfig(
        name=name,
        root=_string(doc['root'], 'dataset.root', optional=True),
        limit_train=_integer(doc['limit_train'], 'dataset.limit_train', minimum=1, optional=True),
        limit_test=_integer(doc['limit_test'], 'dataset.limit_test', minimum=1, optional=True),
        synthetic=SyntheticSpec(samples_per_class=_integer(s['samples_per_class'], f'{p}.samples_per_class',
                                                           minimum=1), **common),
        synthetic_test=SyntheticSpec(samples_per_class=_integer(s['test_samples_per_class'],
                                                                f'{p}.test_samples_per_class', minimum=1), **common),
    )


def _sweep_axes(doc: dict, raw) -> Tuple[SweepAxis, ...]:
    if not isinstance(raw, list):
        raise ConfigError('sweep', 'expected a list of axes')
    axes = []
    for i, axis in enumerate(raw):
        field = f'sweep[{i}]'
        if not isinstance(axis, dict) or set(axis) != {'parameter', 'values'}:
            raise ConfigError(field, 'expected an object with exactly "parameter" and "values"')
        parameter = axis['parameter']
        if not isinstance(parameter, str):
            raise ConfigError(f'{field}.parameter', f'expected a string, got {parameter!r}')
        paths = SWEEP_ALIASES.get(parameter, (parameter,))
        for path in paths:
            if path.split('.')[0] in ('sweep', 'seeds', 'workers', 'output_dir'):
                raise ConfigError(f'{field}.parameter', f'{parameter!r} cannot be swept')
            try:
                current = _lookup(doc, path)
            except KeyError:
                raise ConfigError(f'{field}.parameter', f'unknown sweep parameter {parameter!r}')
            if isinstance(current, dict) and path not in _OPAQUE:
                raise ConfigError(f'{field}.parameter', f'{parameter!r} is a section, not a parameter')
        if parameter in ('depth', 'width') and doc['topology']['hidden'] is not None:
            raise ConfigError(f'{field}.parameter', f'{parameter} sweeps require topology.hidden to be null')
        values = axis['values']
        if not isinstance(values, list) or not values:
            raise ConfigError(f'{field}.values', 'expected a non-empty list')
        axes.append(SweepAxis(parameter, paths, tuple(values)))
    return tuple(axes)


def parse_config(document: dict) -> ExperimentConfig:
    doc = _merge(DEFAULTS, document, '')

    hp_doc = doc['hyperparams']
    precisions_doc = hp_doc['precisions']
    if not isinstance(precisions_doc, dict):
        raise ConfigError('hyperparams.precisions', 'expected an object')
    precisions = Precisions(**{
        kind: _quantizer(precisions_doc[kind], f'hyperparams.precisions.{kind}', kind)
        for kind in ('weight', 'activation', 'error', 'gradient')
    })

    seeds = doc['seeds']
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError('seeds', 'expected a non-empty list of integers')
    seeds = tuple(_integer(seed, f'seeds[{i}]') for i, seed in enumerate(seeds))

    hyperparams = HyperParams(
        learning_rate=_number(hp_doc['learning_rate'], 'hyperparams.learning_rate', minimum=0.0),
        batch_size=_integer(hp_doc['batch_size'], 'hyperparams.batch_size', minimum=1),
        epochs=_integer(hp_doc['epochs'], 'hyperparams.epochs', minimum=0),
        seed=seeds[0],
        precisions=precisions,
        bp_requantize=_boolean(hp_doc['bp_requantize'], 'hyperparams.bp_requantize'),
    )
    try:
        crossbar = _crossbar(doc['backend']['crossbar'])
    except ContractViolation as e:
        raise ConfigError('backend.crossbar', str(e))

    topology = _topology(doc['topology'])
    costs = CostConfig(
        profile=_string(doc['costs']['profile'], 'costs.profile'),
        tile_dim=_integer(doc['costs']['tile_dim'], 'costs.tile_dim', minimum=1),
        dfa_parallelism=_integer(doc['costs']['dfa_parallelism'], 'costs.dfa_parallelism', minimum=1, optional=True),
    )
    depth = len(topology.hidden_dims()) + 1
    if costs.dfa_parallelism is not None and costs.dfa_parallelism > depth:
        raise ConfigError('costs.dfa_parallelism', f'must not exceed the depth ({depth})')

    config = ExperimentConfig(
        name=_string(doc['name'], 'name'),
        trainer=TrainerKind(_choice(doc['trainer'], 'trainer', tuple(kind.value for kind in TrainerKind))),
        topology=topology,
        hyperparams=hyperparams,
        backend=BackendConfig(_choice(doc['backend']['kind'], 'backend.kind', ('digital', 'analog')), crossbar),
        costs=costs,
        dataset=_dataset(doc['dataset']),
        sweep=_sweep_axes(doc, doc['sweep']),
        seeds=seeds,
        workers=_integer(doc['workers'], 'workers', minimum=1),
        output_dir=_string(doc['output_dir'], 'output_dir'),
        record_wall_time=_boolean(doc['record_wall_time'], 'record_wall_time'),
        save_checkpoint=_boolean(doc['save_checkpoint'], 'save_checkpoint'),
        document=doc,
    )
    return config


def validate_grid(config: ExperimentConfig):
    """Parse every single-axis point so bad sweep values fail before compute."""
    for i, axis in enumerate(config.sweep):
        for j, value in enumerate(axis.values):
            try:
                config.with_values([(path, value) for path in axis.paths])
            except ConfigError as e:
                raise ConfigError(f'sweep[{i}].values[{j}]', f'{e.field}: {e.message}')


def _read_json(path: str) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError('<document>', f'cannot read {path}: {e.strerror}')
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError('<document>', e.msg, line=e.lineno, column=e.colno)


def preset_path(name: str) -> str:
    return os.path.join(PRESET_DIR, f'{name}.json')


def available_presets():
    return sorted(f[:-5] for f in os.listdir(PRESET_DIR) if f.endswith('.json'))


def load_config(path: str = None, preset: str = None) -> ExperimentConfig:
    """Resolve a config: DEFAULTS, then the preset, then the file."""
    document = {}
    if preset is not None:
        if not os.path.exists(preset_path(preset)):
            raise ConfigError('--preset', f'unknown preset {preset!r}; available: {", ".join(available_presets())}')
        document = _read_json(preset_path(preset))
    if path is not None:
        overlay = _read_json(path)
        if not isinstance(overlay, dict):
            raise ConfigError('<document>', 'expected a JSON object')
        document = _deep_update(document, overlay)
    config = parse_config(document)
    validate_grid(config)
    return config


def _deep_update(base: dict, overlay: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged
