"""Run and sweep artifacts: history, cost report, manifest and sweep tables."""
import json
import os
from typing import Dict, Iterable, List, Sequence

import pandas as pd

from src.domain.hwcost import CostReport
from src.domain.mathcore import Rng
from src.util.config import ExperimentConfig, blob_hash

HISTORY_FILE = 'history.csv'
COST_JSON_FILE = 'cost.json'
COST_CSV_FILE = 'cost.csv'
MANIFEST_FILE = 'manifest.json'
CHECKPOINT_FILE = 'model.cimtrain'
POINTS_FILE = 'points.csv'
MERGED_FILE = 'merged.csv'

HISTORY_COLUMNS = ['epoch', 'split', 'loss', 'accuracy', 'wall_seconds']
POINT_KEYS = ['point', 'seed', 'run_dir']
METRIC_COLUMNS = ['final_train_accuracy', 'final_test_accuracy', 'final_test_loss', 'epochs_to_converge',
                  'diverged', 'area_um2', 'energy_pJ', 'latency_ns', 'backward_latency_ns',
                  'modeled_time_to_converge_ns']


def history_frame(rows: Iterable) -> pd.DataFrame:
    records = [{'epoch': r.epoch, 'split': r.split, 'loss': r.loss, 'accuracy': r.accuracy,
                'wall_seconds': r.wall_seconds} for r in rows]
    return pd.DataFrame.from_records(records, columns=HISTORY_COLUMNS)


def write_history(path: str, rows: Iterable):
    history_frame(rows).to_csv(path, index=False)


def write_json(path: str, document):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2)
        f.write('\n')


def write_cost(directory: str, report: CostReport):
    write_json(os.path.join(directory, COST_JSON_FILE), report.to_dict())
    report.to_frame().to_csv(os.path.join(directory, COST_CSV_FILE), index=False)


def file_hash(path: str) -> str:
    with open(path, 'rb') as f:
        return blob_hash(f.read())


def write_manifest(directory: str, config: ExperimentConfig, seed: int, outputs: Sequence[str],
                   inputs: Dict[str, str] = None, extras: dict = None):
    """Record everything needed to reproduce the outputs: the resolved
    config, the seed, the stream algorithm and content hashes."""
    manifest = {
        'name': config.name,
        'seed': seed,
        'rng': Rng.ALGORITHM,
        'config': config.document,
        'config_hash': config.config_hash(),
        'inputs': {name: file_hash(path) for name, path in sorted((inputs or {}).items())},
        'outputs': {name: file_hash(os.path.join(directory, name)) for name in outputs
                    if os.path.exists(os.path.join(directory, name))},
    }
    if extras:
        manifest.update(extras)
    write_json(os.path.join(directory, MANIFEST_FILE), manifest)
    return manifest


def axis_columns(points: pd.DataFrame) -> List[str]:
    return [c for c in points.columns if c not in POINT_KEYS and c not in METRIC_COLUMNS]


def write_points(directory: str, records: List[dict]) -> str:
    path = os.path.join(directory, POINTS_FILE)
    frame = pd.DataFrame.from_records(records)
    ordered = [c for c in POINT_KEYS if c in frame.columns] + axis_columns(frame) + \
        [c for c in METRIC_COLUMNS if c in frame.columns]
    frame[ordered].to_csv(path, index=False)
    return path


def merge_points(points: pd.DataFrame) -> pd.DataFrame:
    """Mean and population std of every metric across seeds, per grid point."""
    axes = axis_columns(points)
    metrics = [c for c in METRIC_COLUMNS if c in points.columns]
    grouped = points.groupby(axes, sort=True, dropna=False)[metrics]
    merged = pd.concat([
        grouped.size().rename('seeds'),
        grouped.mean().add_suffix('_mean'),
        grouped.std(ddof=0).add_suffix('_std'),
    ], axis=1)
    return merged.reset_index()


def merge_directory(directory: str) -> pd.DataFrame:
    points = pd.read_csv(os.path.join(directory, POINTS_FILE))
    merged = merge_points(points)
    merged.to_csv(os.path.join(directory, MERGED_FILE), index=False)
    return merged
