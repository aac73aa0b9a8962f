import json
import os
import tempfile
import unittest

from src.domain.errors import ConfigError
from src.domain.trainers import TrainerKind
from src.util.config import (DEFAULTS, QUANTIZER_RANGES, SCHEMA, available_presets, load_config, parse_config,
                              validate_grid)


class TestParse(unittest.TestCase):

    def test_defaults(self):
        config = parse_config({})
        self.assertEqual(config.trainer, TrainerKind.DFA)
        self.assertEqual(config.topology.hidden_dims(), (1024,) * 4)
        self.assertEqual(config.backend.crossbar.subarray_rows, 128)
        self.assertEqual(config.seeds, (0,))
        self.assertEqual(config.hyperparams.seed, 0)
        self.assertEqual(config.document, DEFAULTS)
        self.assertIn('every grid point', SCHEMA['seeds'])

    def test_unknown_field_names_its_path(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({'backend': {'crossbar': {'adc_bitz': 4}}})
        self.assertEqual(ctx.exception.field, 'backend.crossbar.adc_bitz')

    def test_type_and_range_errors(self):
        cases = [
            ({'hyperparams': {'batch_size': 0}}, 'hyperparams.batch_size'),
            ({'hyperparams': {'learning_rate': 'fast'}}, 'hyperparams.learning_rate'),
            ({'trainer': 'hebbian'}, 'trainer'),
            ({'topology': {'hidden': [64, 0]}}, 'topology.hidden[1]'),
            ({'backend': {'crossbar': {'g_min': 2.0}}}, 'backend.crossbar.g_min'),
            ({'topology': {'depth': 3}, 'costs': {'dfa_parallelism': 4}}, 'costs.dfa_parallelism'),
            ({'seeds': []}, 'seeds'),
            ({'seeds': [0, 'one']}, 'seeds[1]'),
            ({'record_wall_time': 1}, 'record_wall_time'),
        ]
        for document, field in cases:
            with self.assertRaises(ConfigError, msg=field) as ctx:
                parse_config(document)
            self.assertEqual(ctx.exception.field, field)

    def test_quantizer_shorthand(self):
        config = parse_config({'hyperparams': {'precisions': {
            'weight': 8, 'error': {'bits': 4, 'mode': 'stochastic'}}}})
        precisions = config.hyperparams.precisions
        self.assertEqual(precisions.weight.bits, 8)
        self.assertFalse(precisions.weight.dynamic)
        self.assertEqual(precisions.error.mode, 'stochastic')
        self.assertFalse(precisions.error.dynamic)
        self.assertIsNone(precisions.gradient)

        config = parse_config({'hyperparams': {'precisions': {'activation': 4, 'gradient': 5}}})
        precisions = config.hyperparams.precisions
        self.assertTrue(precisions.activation.dynamic)
        self.assertFalse(precisions.gradient.dynamic)
        self.assertEqual(precisions.gradient.range, QUANTIZER_RANGES['gradient'])

        with self.assertRaises(ConfigError) as ctx:
            parse_config({'hyperparams': {'precisions': {'error': {'bits': 4, 'rounding': 'up'}}}})
        self.assertEqual(ctx.exception.field, 'hyperparams.precisions.error.rounding')

    def test_explicit_hidden_widths(self):
        config = parse_config({'topology': {'hidden': [256, 128]}})
        topology = config.topology.build(784, 10)
        self.assertEqual(topology.layer_dims, (784, 256, 128, 10))

    def test_config_hash(self):
        a = parse_config({'name': 'x', 'trainer': 'bp'})
        b = parse_config({'trainer': 'bp', 'name': 'x'})
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertEqual(len(a.config_hash()), 40)
        self.assertNotEqual(a.config_hash(), parse_config({'name': 'y', 'trainer': 'bp'}).config_hash())

    def test_with_override(self):
        config = parse_config({}).with_override('hyperparams.epochs', 3)
        self.assertEqual(config.hyperparams.epochs, 3)
        self.assertEqual(config.document['hyperparams']['epochs'], 3)


class TestSweep(unittest.TestCase):

    def test_aliases(self):
        config = parse_config({'sweep': [{'parameter': 'subarray_size', 'values': [64, 256]},
                                         {'parameter': 'trainer', 'values': ['bp', 'dfa']}]})
        axis = config.sweep[0]
        self.assertEqual(axis.paths, ('backend.crossbar.subarray_rows', 'backend.crossbar.subarray_cols'))
        point = config.with_values([(path, 64) for path in axis.paths])
        self.assertEqual((point.backend.crossbar.subarray_rows, point.backend.crossbar.subarray_cols), (64, 64))

    def test_dotted_path(self):
        config = parse_config({'sweep': [{'parameter': 'costs.tile_dim', 'values': [512]}]})
        self.assertEqual(config.sweep[0].paths, ('costs.tile_dim',))

    def test_bad_axes(self):
        cases = [
            [{'parameter': 'flux', 'values': [1]}],
            [{'parameter': 'backend', 'values': []}],
            [{'parameter': 'seeds', 'values': [[1]]}],
            [{'parameter': 'backend.crossbar', 'values': [1]}],
            [{'values': [1]}],
        ]
        for sweep in cases:
            with self.assertRaises(ConfigError, msg=sweep) as ctx:
                parse_config({'sweep': sweep})
            self.assertTrue(ctx.exception.field.startswith('sweep[0]'), ctx.exception.field)

    def test_depth_sweep_needs_uniform_topology(self):
        with self.assertRaises(ConfigError):
            parse_config({'topology': {'hidden': [32]}, 'sweep': [{'parameter': 'depth', 'values': [2]}]})

    def test_validate_grid(self):
        config = parse_config({'sweep': [{'parameter': 'adc_bits', 'values': [4, 0]}]})
        with self.assertRaises(ConfigError) as ctx:
            validate_grid(config)
        self.assertEqual(ctx.exception.field, 'sweep[0].values[1]')
        self.assertIn('backend.crossbar.adc_bits', ctx.exception.message)


class TestLoad(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _write(self, text):
        path = os.path.join(self.tmp.name, 'config.json')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_syntax_error_reports_position(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self._write('{\n  "name": "x",\n  "trainer": bp\n}'))
        self.assertEqual(ctx.exception.line, 3)
        self.assertEqual(ctx.exception.column, 14)
        self.assertIn('line 3', str(ctx.exception))

    def test_presets_load(self):
        self.assertIn('fig6', available_presets())
        for name in available_presets():
            config = load_config(preset=name)
            self.assertEqual(config.name, name)
            self.assertTrue(config.sweep)

    def test_file_overlays_preset(self):
        path = self._write(json.dumps({'hyperparams': {'epochs': 2}, 'dataset': {'limit_train': 100}}))
        config = load_config(path, preset='fig6')
        self.assertEqual(config.hyperparams.epochs, 2)
        self.assertEqual(config.dataset.limit_train, 100)
        self.assertEqual(config.topology.width, 1024)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(preset='fig99')
        self.assertEqual(ctx.exception.field, '--preset')

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.tmp.name, 'absent.json'))
