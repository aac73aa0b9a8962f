"""Command-line front end.

    python -m src.cli run --preset fig2 --out runs/fig2
    python -m src.cli sweep --config my_sweep.json --workers 4
    python -m src.cli cost --preset fig7 --out runs/fig7
    python -m src.cli describe --config config_example.json
    python -m src.cli merge runs/fig3
"""
import functools
import json
import os
import sys
from uuid import UUID

import click
from eventsourcing.application import AggregateNotFound

from src.domain.errors import CimTrainError, ConfigError
from src.service.ExperimentService import ExperimentService
from src.util import artifacts, logwrapper
from src.util.config import load_config
from src.util.serializer import serialize_cost, serialize_run, serialize_sweep

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_seeds(value):
    if value is None:
        return None
    try:
        seeds = [int(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise ConfigError('--seed-list', f'expected comma separated integers, got {value!r}')
    if not seeds:
        raise ConfigError('--seed-list', 'expected at least one seed')
    return seeds


def _resolve(config_path, preset, seed_list=None, workers=None):
    config = load_config(config_path, preset)
    seeds = _parse_seeds(seed_list)
    if seeds is not None:
        config = config.with_override('seeds', seeds)
    if workers is not None:
        config = config.with_override('workers', workers)
    return config


def _handled(command):
    """Map failures onto exit codes."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ConfigError as e:
            click.echo(str(e), err=True)
            sys.exit(EXIT_CONFIG)
        except (CimTrainError, OSError) as e:
            logwrapper.error('Command failed.', error=type(e).__name__)
            click.echo(f'error: {e}', err=True)
            sys.exit(EXIT_FAILURE)
    return wrapper


def _echo_json(document):
    click.echo(json.dumps(document, indent=2, sort_keys=True, default=str))


def config_options(command):
    command = click.option('--preset', default=None, help='Named preset under src/presets.')(command)
    command = click.option('--config', 'config_path', default=None, type=click.Path(dir_okay=False),
                           help='Experiment JSON, merged over the preset.')(command)
    return command


@click.group()
@click.option('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR.')
def main(log_level):
    if log_level is not None:
        logwrapper.configure(log_level)


@main.command()
@config_options
@click.option('--out', 'out_dir', default=None, help='Artifact directory.')
@click.option('--seed-list', default=None, help='Comma separated seeds, e.g. 0,1,2.')
@click.option('--ledger', default=None, type=click.Path(dir_okay=False), help='SQLite run ledger.')
@_handled
def run(config_path, preset, out_dir, seed_list, ledger):
    """Train once per seed and write history, cost and manifest."""
    config = _resolve(config_path, preset, seed_list)
    with ExperimentService(ledger) as service:
        results = service.run(config, out_dir)
        _echo_json([dict(r.summary, seed=r.seed, out_dir=r.out_dir) for r in results])

    diverged = [r for r in results if r.diverged]
    for r in diverged:
        click.echo(f'diverged: seed {r.seed} at epoch {r.divergence.epoch} batch {r.divergence.batch} '
                   f'({r.divergence.reason})', err=True)
    if diverged:
        sys.exit(EXIT_DIVERGED)


@main.command()
@config_options
@click.option('--out', 'out_dir', default=None, help='Artifact directory.')
@click.option('--seed-list', default=None, help='Comma separated seeds, e.g. 0,1,2.')
@click.option('--workers', default=None, type=int, help='Grid points run concurrently.')
@click.option('--ledger', default=None, type=click.Path(dir_okay=False), help='SQLite run ledger.')
@_handled
def sweep(config_path, preset, out_dir, seed_list, workers, ledger):
    """Run every grid point for every seed and merge the results."""
    config = _resolve(config_path, preset, seed_list, workers)
    with ExperimentService(ledger) as service:
        results, merged = service.sweep(config, out_dir)
    click.echo(merged.to_csv(index=False), nl=False)

    if any(r.diverged for r in results):
        click.echo(f'diverged: {sum(r.diverged for r in results)} of {len(results)} runs', err=True)
        sys.exit(EXIT_DIVERGED)


@main.command()
@config_options
@click.option('--out', 'out_dir', default=None, help='Write cost.json and cost.csv here.')
@_handled
def cost(config_path, preset, out_dir):
    """Closed-form area, energy and latency without training."""
    config = _resolve(config_path, preset)
    with ExperimentService() as service:
        reports = service.cost(config, out_dir)
    _echo_json([dict(serialize_cost(report), point=labels) for labels, report in reports])


@main.command()
@config_options
@_handled
def describe(config_path, preset):
    """Print the resolved config and its floorplan."""
    config = _resolve(config_path, preset)
    with ExperimentService() as service:
        _echo_json(service.describe(config))


@main.command()
@click.argument('directory', type=click.Path(exists=True, file_okay=False))
@_handled
def merge(directory):
    """Rebuild merged.csv from points.csv."""
    if not os.path.exists(os.path.join(directory, artifacts.POINTS_FILE)):
        raise ConfigError('DIR', f'no {artifacts.POINTS_FILE} in {directory}')
    merged = artifacts.merge_directory(directory)
    click.echo(merged.to_csv(index=False), nl=False)


@main.command()
@click.argument('run_id')
@click.option('--ledger', required=True, type=click.Path(exists=True, dir_okay=False), help='SQLite run ledger.')
@_handled
def show(run_id, ledger):
    """Print one run recorded in a ledger."""
    try:
        UUID(run_id)
    except ValueError:
        raise ConfigError('RUN_ID', f'not a run id: {run_id!r}')
    with ExperimentService(ledger) as service:
        try:
            run = service.get_run(run_id)
        except AggregateNotFound:
            raise ConfigError('RUN_ID', f'no run {run_id} in {ledger}')
        _echo_json(serialize_run(run))


@main.command()
@click.argument('name')
@click.option('--ledger', required=True, type=click.Path(exists=True, dir_okay=False), help='SQLite run ledger.')
@_handled
def runs(name, ledger):
    """Print every completed run of a sweep recorded in a ledger."""
    with ExperimentService(ledger) as service:
        _echo_json(serialize_sweep(name, service.get_sweep_runs(name)))


if __name__ == '__main__':
    main()
