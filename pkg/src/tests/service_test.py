import json
import os
import tempfile
import unittest

from uuid import UUID

import numpy as np
import pandas as pd

from src.domain.errors import ConfigError
from src.domain.hwcost import profile_path
from src.domain.mathcore import Rng
from src.service.ExperimentService import ExperimentService
from src.util import artifacts
from src.util.config import parse_config
from src.util.dataio import IDX_FILES, Dataset, write_idx

TINY = {
    'name': 'tiny',
    'trainer': 'dfa',
    'topology': {'depth': 2, 'width': 8},
    'hyperparams': {'learning_rate': 0.1, 'batch_size': 16, 'epochs': 2},
    'dataset': {
        'name': 'synthetic',
        'synthetic': {'classes': 3, 'features': 8, 'samples_per_class': 10, 'test_samples_per_class': 4},
    },
}


def tiny(**overrides):
    document = dict(TINY)
    document.update(overrides)
    return parse_config(document)


class ServiceTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.service = ExperimentService()
        self.addCleanup(self.service.shutdown)

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def read(self, *parts):
        with open(self.path(*parts), 'rb') as f:
            return f.read()


class TestRun(ServiceTestCase):

    def test_run_writes_artifacts(self):
        [result] = self.service.run(tiny(), self.path('a'))

        for name in (artifacts.HISTORY_FILE, artifacts.COST_JSON_FILE, artifacts.COST_CSV_FILE,
                     artifacts.MANIFEST_FILE):
            self.assertTrue(os.path.exists(self.path('a', name)), name)
        history = pd.read_csv(self.path('a', artifacts.HISTORY_FILE))
        self.assertEqual(list(history.columns), artifacts.HISTORY_COLUMNS)
        self.assertEqual(len(history), 4)

        self.assertFalse(result.diverged)
        self.assertEqual(result.summary['diverged'], False)
        self.assertGreater(result.summary['area_um2'], 0.0)

        print('test_run_writes_artifacts finished.')

    def test_repeat_run_is_byte_identical(self):
        self.service.run(tiny(), self.path('a'))
        self.service.run(tiny(), self.path('b'))

        self.assertEqual(self.read('a', artifacts.HISTORY_FILE), self.read('b', artifacts.HISTORY_FILE))
        self.assertEqual(self.read('a', artifacts.COST_JSON_FILE), self.read('b', artifacts.COST_JSON_FILE))

    def test_one_directory_per_seed(self):
        results = self.service.run(tiny(seeds=[0, 1]), self.path('s'))

        self.assertEqual([r.seed for r in results], [0, 1])
        self.assertTrue(os.path.exists(self.path('s', 'seed-0', artifacts.HISTORY_FILE)))
        self.assertTrue(os.path.exists(self.path('s', 'seed-1', artifacts.HISTORY_FILE)))
        self.assertNotEqual(self.read('s', 'seed-0', artifacts.HISTORY_FILE),
                            self.read('s', 'seed-1', artifacts.HISTORY_FILE))

    def test_manifest_hashes_inputs(self):
        self.service.run(tiny(), self.path('syn'))
        with open(self.path('syn', artifacts.MANIFEST_FILE)) as f:
            manifest = json.load(f)
        self.assertEqual(manifest['inputs'], {'profile': artifacts.file_hash(profile_path('default'))})

        images = Rng(3).uniform(0.0, 1.0, (784, 20))
        dataset = Dataset(images, np.arange(20) % 10, 'train', 10)
        os.makedirs(self.path('data', 'mnist'))
        for split in ('train', 'test'):
            write_idx(*[self.path('data', 'mnist', stem) for stem in IDX_FILES[split]], dataset)
        config = tiny(dataset={'name': 'mnist', 'root': self.path('data')})
        self.service.run(config, self.path('idx'))
        with open(self.path('idx', artifacts.MANIFEST_FILE)) as f:
            inputs = json.load(f)['inputs']

        self.assertEqual(len(inputs), 5)
        for split in ('train', 'test'):
            for stem in IDX_FILES[split]:
                self.assertEqual(inputs[f'mnist/{stem}'], artifacts.file_hash(self.path('data', 'mnist', stem)))

    def test_checkpoint(self):
        self.service.run(tiny(save_checkpoint=True), self.path('c'))
        self.assertTrue(os.path.exists(self.path('c', artifacts.CHECKPOINT_FILE)))


class TestSweep(ServiceTestCase):

    def test_sweep(self):
        config = tiny(sweep=[{'parameter': 'trainer', 'values': ['bp', 'dfa']}], seeds=[0, 1])
        results, merged = self.service.sweep(config, self.path('sweep'))

        self.assertEqual(len(results), 4)
        points = pd.read_csv(self.path('sweep', artifacts.POINTS_FILE))
        self.assertEqual(len(points), 4)
        self.assertEqual(list(points.columns[:4]), ['point', 'seed', 'run_dir', 'trainer'])
        self.assertTrue(os.path.exists(self.path('sweep', 'point-000-seed-1', artifacts.HISTORY_FILE)))

        self.assertEqual(merged['trainer'].tolist(), ['bp', 'dfa'])
        self.assertEqual(merged['seeds'].tolist(), [2, 2])
        self.assertIn('final_test_accuracy_mean', merged.columns)
        self.assertIn('area_um2_std', merged.columns)
        self.assertTrue(os.path.exists(self.path('sweep', artifacts.MERGED_FILE)))

        print('test_sweep finished.')

    def test_sweep_index(self):
        config = tiny(sweep=[{'parameter': 'width', 'values': [4, 8]}])
        self.service.sweep(config, self.path('w'))

        runs = self.service.get_sweep_runs('tiny')
        self.assertEqual(len(runs), 2)
        self.assertTrue(all(run.completed for run in runs))
        self.assertEqual(sorted(run.seed for run in runs), [0, 0])
        self.assertEqual(self.service.get_sweep_runs('other'), [])

        run = self.service.get_run(str(runs[0].id))
        self.assertEqual(run.id, UUID(str(runs[0].id)))
        self.assertEqual(run.sweep, 'tiny')
        self.assertEqual(len(run.epochs), 4)

    def test_worker_count_does_not_change_artifacts(self):
        config = tiny(sweep=[{'parameter': 'trainer', 'values': ['bp', 'dfa']}])
        self.service.sweep(config, self.path('serial'))
        self.service.sweep(config.with_override('workers', 2), self.path('pooled'))

        for point in ('point-000-seed-0', 'point-001-seed-0'):
            for name in (artifacts.HISTORY_FILE, artifacts.COST_JSON_FILE):
                self.assertEqual(self.read('serial', point, name), self.read('pooled', point, name))
        self.assertEqual(self.read('serial', artifacts.MERGED_FILE), self.read('pooled', artifacts.MERGED_FILE))

    def test_sweep_needs_an_axis(self):
        with self.assertRaises(ConfigError):
            self.service.sweep(tiny(), self.path('none'))


class TestCost(ServiceTestCase):

    def test_single_point(self):
        [(labels, report)] = self.service.cost(tiny(), self.path('cost'))
        self.assertEqual(labels, {})
        self.assertEqual(report.trainer, 'dfa')
        self.assertTrue(os.path.exists(self.path('cost', artifacts.COST_JSON_FILE)))

    def test_grid(self):
        config = tiny(sweep=[{'parameter': 'trainer', 'values': ['bp', 'dfa']},
                             {'parameter': 'width', 'values': [8, 16]}])
        reports = self.service.cost(config, self.path('grid'))

        self.assertEqual([labels for labels, _ in reports], [
            {'trainer': 'bp', 'width': 8}, {'trainer': 'bp', 'width': 16},
            {'trainer': 'dfa', 'width': 8}, {'trainer': 'dfa', 'width': 16},
        ])
        points = pd.read_csv(self.path('grid', artifacts.POINTS_FILE))
        self.assertEqual(points['width'].tolist(), [8, 16, 8, 16])
        self.assertTrue(os.path.exists(self.path('grid', 'point-003', artifacts.COST_CSV_FILE)))


class TestDescribe(ServiceTestCase):

    def test_describe(self):
        config = tiny(sweep=[{'parameter': 'width', 'values': [4, 8, 16]}], seeds=[0, 1])
        description = self.service.describe(config)

        self.assertEqual(description['layer_dims'], [8, 8, 3])
        self.assertEqual(description['grid_points'], 3)
        self.assertEqual(description['sweep'], {'width': [4, 8, 16]})
        self.assertEqual(description['config_hash'], config.config_hash())
        self.assertEqual(description['floorplan']['trainer'], 'dfa')
        self.assertIn('cell_area', description['unit_costs'])
        self.assertIn('hyperparams.learning_rate', description['parameters'])
