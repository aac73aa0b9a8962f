"""Single-point execution: build, train, cost and write artifacts.

Everything here is a plain function of a config document and a seed so
that grid points can run in worker processes.
"""
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from src.domain.analog import AnalogBackend, Backend, DigitalBackend
from src.domain.hwcost import CostReport, EpochSchedule, build_floorplan, cost_report, load_profile, profile_path
from src.domain.mathcore import Rng
from src.domain.network import Topology, xavier_init
from src.domain.trainers import Divergence, HistoryRow, TrainerKind, epochs_to_converge, train
from src.util import artifacts, logwrapper
from src.util.checkpoint import save_checkpoint
from src.util.config import DatasetConfig, ExperimentConfig, parse_config
from src.util.dataio import Dataset, dataset_files, load_dataset, synthetic


@dataclass
class RunResult:
    name: str
    seed: int
    out_dir: str
    trainer: str
    backend: str
    config_hash: str
    rows: List[HistoryRow] = field(default_factory=list)
    divergence: Optional[Divergence] = None
    summary: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return self.divergence is not None


@lru_cache(maxsize=8)
def load_splits(dataset: DatasetConfig) -> Tuple[Dataset, Dataset]:
    if dataset.is_synthetic:
        train_set, test_set = synthetic(dataset.synthetic, 'train'), synthetic(dataset.synthetic_test, 'test')
        return train_set.take(dataset.limit_train), test_set.take(dataset.limit_test)
    return (load_dataset(dataset.name, 'train', dataset.root, dataset.limit_train),
            load_dataset(dataset.name, 'test', dataset.root, dataset.limit_test))


def input_files(config: ExperimentConfig) -> Dict[str, str]:
    """Files a run reads, keyed by their name in the manifest."""
    inputs = {'profile': profile_path(config.costs.profile)}
    if not config.dataset.is_synthetic:
        for split in ('train', 'test'):
            for path in dataset_files(config.dataset.name, split, config.dataset.root):
                inputs[f'{config.dataset.name}/{os.path.basename(path)}'] = path
    return inputs


def build_topology(config: ExperimentConfig) -> Topology:
    features, classes, _ = config.dataset.shape()
    return config.topology.build(features, classes)


def build_backend(config: ExperimentConfig, rng: Rng) -> Backend:
    if config.backend.kind == 'analog':
        return AnalogBackend(config.backend.crossbar, rng)
    return DigitalBackend(config.backend.crossbar)


def build_cost(config: ExperimentConfig, topology: Topology = None, samples: int = None) -> CostReport:
    topology = topology or build_topology(config)
    if samples is None:
        samples = config.dataset.shape()[2]
    fp = build_floorplan(topology, config.trainer, config.backend.crossbar, config.costs.tile_dim,
                         config.hyperparams.batch_size, config.costs.dfa_parallelism)
    schedule = EpochSchedule(samples, config.hyperparams.batch_size, config.hyperparams.epochs)
    report = cost_report(fp, load_profile(config.costs.profile), schedule)
    if config.backend.kind == 'analog' and config.trainer is TrainerKind.BP:
        report.notes.append('extension: BP on analog backend')
    return report


def plain(value):
    """JSON-safe scalar: numpy scalars unwrapped, non-finite floats dropped."""
    if hasattr(value, 'item'):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def execute_run(document: dict, seed: int, out_dir: str) -> RunResult:
    config = parse_config(document)
    hp = config.hyperparams_for(seed)
    train_set, test_set = load_splits(config.dataset)
    topology = config.topology.build(train_set.features, train_set.classes)

    root = Rng(seed)
    mlp = xavier_init(topology, root.derive('init'))
    backend = build_backend(config, root.derive('noise'))
    logwrapper.info('Starting run.', name=config.name, trainer=config.trainer.value, backend=backend.name,
                    seed=seed, layers=list(topology.layer_dims))

    history = train(mlp, train_set, test_set, hp, config.trainer, backend,
                    record_wall_time=config.record_wall_time)

    report = build_cost(config, topology, train_set.samples)
    converge = epochs_to_converge(history)
    modeled = report.lines['latency_per_epoch_ns'] * converge if converge is not None else None
    report.lines['modeled_time_to_converge_ns'] = modeled

    os.makedirs(out_dir, exist_ok=True)
    artifacts.write_history(os.path.join(out_dir, artifacts.HISTORY_FILE), history.rows)
    artifacts.write_cost(out_dir, report)
    outputs = [artifacts.HISTORY_FILE, artifacts.COST_JSON_FILE, artifacts.COST_CSV_FILE]
    if config.save_checkpoint:
        save_checkpoint(os.path.join(out_dir, artifacts.CHECKPOINT_FILE), history.model, history.bank)
        outputs.append(artifacts.CHECKPOINT_FILE)
    artifacts.write_manifest(out_dir, config, seed, outputs, inputs=input_files(config), extras={
        'feedback_fingerprint': history.bank.fingerprint(),
        'diverged': history.diverged,
    })

    final_train, final_test = history.final('train'), history.final('test')
    summary = {
        'final_train_accuracy': plain(final_train.accuracy) if final_train else None,
        'final_test_accuracy': plain(final_test.accuracy) if final_test else None,
        'final_test_loss': plain(final_test.loss) if final_test else None,
        'epochs_to_converge': converge,
        'diverged': history.diverged,
        'area_um2': plain(report.area_total),
        'energy_pJ': plain(report.energy_total),
        'latency_ns': plain(report.latency_total),
        'backward_latency_ns': plain(report.lines['backward_latency_ns']),
        'modeled_time_to_converge_ns': plain(modeled),
    }
    return RunResult(config.name, seed, out_dir, config.trainer.value, backend.name, config.config_hash(),
                     history.rows, history.divergence, summary)


def cost_summary(report: CostReport) -> dict:
    return {
        'area_um2': plain(report.area_total),
        'energy_pJ': plain(report.energy_total),
        'latency_ns': plain(report.latency_total),
        'backward_latency_ns': plain(report.lines['backward_latency_ns']),
    }


def axis_label(value):
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return value


def grid(config: ExperimentConfig) -> List[Tuple[int, dict, dict]]:
    """Every grid point as (index, resolved document, axis labels).

    Documents are resolved up front so an invalid combination fails
    before anything runs.
    """
    points = []
    axes = config.sweep
    for index, values in enumerate(itertools.product(*(axis.values for axis in axes))):
        assignments = [(path, value) for axis, value in zip(axes, values) for path in axis.paths]
        point_config = config.with_values(assignments)
        labels = {axis.parameter: axis_label(value) for axis, value in zip(axes, values)}
        points.append((index, point_config.document, labels))
    return points


def run_directory(base: str, index: int, seed: int) -> str:
    return os.path.join(base, f'point-{index:03d}-seed-{seed}')


def seed_directories(base: str, seeds: Sequence[int]) -> List[str]:
    if len(seeds) == 1:
        return [base]
    return [os.path.join(base, f'seed-{seed}') for seed in seeds]
