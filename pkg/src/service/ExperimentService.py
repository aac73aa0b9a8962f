from concurrent.futures import ProcessPoolExecutor

import os
from typing import List, Optional
from uuid import UUID

from eventsourcing.system import SingleThreadedRunner, System

from src.application.RunApplication import RunApplication
from src.application.SweepIndexProcessApplication import SweepIndexProcessApplication
from src.domain.errors import ConfigError
from src.domain.hwcost import build_floorplan, profile_as_dict, load_profile
from src.service import experiment
from src.service.experiment import RunResult
from src.util import artifacts, logwrapper
from src.util.config import ExperimentConfig, SCHEMA, parse_config


def _ledger_env(ledger_path: Optional[str]) -> dict:
    if ledger_path is None:
        return {}
    return {
        'PERSISTENCE_MODULE': 'eventsourcing.sqlite',
        'SQLITE_DBNAME': ledger_path,
        'SQLITE_LOCK_TIMEOUT': '10',
    }


def _execute_point(job):
    index, document, labels, seed, out_dir = job
    result = experiment.execute_run(document, seed, out_dir)
    return index, labels, result


class ExperimentService:
    """Runs, sweeps and cost reports, each run recorded in the event ledger.

    The ledger is in memory unless ``ledger_path`` names a SQLite file.
    """

    def __init__(self, ledger_path: str = None):
        logwrapper.info(f'Initializing ExperimentService[{hex(id(self))}]...')

        self._system = System(pipes=[
            [RunApplication, SweepIndexProcessApplication]
        ])
        self._runner = SingleThreadedRunner(self._system, env=_ledger_env(ledger_path))
        self._runner.start()

    def shutdown(self):
        logwrapper.info(f'Shutting down ExperimentService[{hex(id(self))}]...')
        self._runner.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

    # Store a finished run in the ledger.
    def _record(self, result: RunResult, sweep: str = None) -> UUID:
        runs = self._runner.get(RunApplication)
        run_id = runs.start_run(result.name, result.config_hash, result.trainer, result.backend,
                                result.seed, sweep)
        runs.record_history(run_id, result.rows)
        if result.divergence is not None:
            runs.mark_diverged(run_id, result.divergence)
        runs.complete_run(run_id, dict(result.summary))

        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Recorded run {run_id}.',
                        seed=result.seed, diverged=result.diverged)
        return run_id

    # Train once per seed.
    def run(self, config: ExperimentConfig, out_dir: str = None) -> List[RunResult]:
        out_dir = out_dir or config.output_dir
        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Running {config.name}.',
                        seeds=list(config.seeds), out=out_dir)

        results = []
        for seed, directory in zip(config.seeds, experiment.seed_directories(out_dir, config.seeds)):
            result = experiment.execute_run(config.document, seed, directory)
            self._record(result)
            results.append(result)
        return results

    # Every grid point for every seed, then the merged table.
    def sweep(self, config: ExperimentConfig, out_dir: str = None):
        if not config.sweep:
            raise ConfigError('sweep', 'a sweep needs at least one axis')
        out_dir = out_dir or config.output_dir
        points = experiment.grid(config)
        jobs = [(index, document, labels, seed, experiment.run_directory(out_dir, index, seed))
                for index, document, labels in points for seed in config.seeds]
        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Sweeping {config.name}.',
                        points=len(points), seeds=len(config.seeds), workers=config.workers)

        if config.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                finished = list(pool.map(_execute_point, jobs))
        else:
            finished = [_execute_point(job) for job in jobs]

        records = []
        results = []
        for index, labels, result in finished:
            self._record(result, sweep=config.name)
            record = {'point': index, 'seed': result.seed, 'run_dir': os.path.relpath(result.out_dir, out_dir)}
            record.update(labels)
            record.update(result.summary)
            records.append(record)
            results.append(result)

        os.makedirs(out_dir, exist_ok=True)
        artifacts.write_points(out_dir, records)
        merged = artifacts.merge_directory(out_dir)
        return results, merged

    # Analytical costs only; no training.
    def cost(self, config: ExperimentConfig, out_dir: str = None):
        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Costing {config.name}.')

        if not config.sweep:
            report = experiment.build_cost(config)
            if out_dir is not None:
                os.makedirs(out_dir, exist_ok=True)
                artifacts.write_cost(out_dir, report)
            return [({}, report)]

        reports = []
        records = []
        for index, document, labels in experiment.grid(config):
            report = experiment.build_cost(parse_config(document))
            reports.append((labels, report))
            record = {'point': index}
            record.update(labels)
            record.update(experiment.cost_summary(report))
            records.append(record)
            if out_dir is not None:
                directory = os.path.join(out_dir, f'point-{index:03d}')
                os.makedirs(directory, exist_ok=True)
                artifacts.write_cost(directory, report)
        if out_dir is not None:
            artifacts.write_points(out_dir, records)
        return reports

    def describe(self, config: ExperimentConfig) -> dict:
        topology = experiment.build_topology(config)
        fp = build_floorplan(topology, config.trainer, config.backend.crossbar, config.costs.tile_dim,
                             config.hyperparams.batch_size, config.costs.dfa_parallelism)
        return {
            'name': config.name,
            'config_hash': config.config_hash(),
            'trainer': config.trainer.value,
            'backend': config.backend.kind,
            'layer_dims': list(topology.layer_dims),
            'seeds': list(config.seeds),
            'grid_points': len(experiment.grid(config)) if config.sweep else 1,
            'sweep': {axis.parameter: [experiment.axis_label(v) for v in axis.values] for axis in config.sweep},
            'floorplan': fp.summary(),
            'unit_costs': profile_as_dict(load_profile(config.costs.profile)),
            'config': config.document,
            'parameters': dict(SCHEMA),
        }

    # Get one recorded run
    def get_run(self, run_id: str):
        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Loading run {run_id}.')

        runs = self._runner.get(RunApplication)
        return runs.get_run(UUID(run_id))

    # Get all completed runs of a sweep
    def get_sweep_runs(self, sweep: str):
        logwrapper.info(f'ExperimentService[{hex(id(self))}]: Loading runs of sweep {sweep}.')

        indices = self._runner.get(SweepIndexProcessApplication)
        runs = self._runner.get(RunApplication)

        return [runs.get_run(run_id) for run_id in indices.get_run_ids(sweep)]
