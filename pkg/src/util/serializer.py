from src.domain.hwcost import CostReport


def serialize_run(run):
    return {
        'id': str(run.id),
        'name': run.name,
        'configHash': run.config_hash,
        'trainer': run.trainer,
        'backend': run.backend,
        'seed': run.seed,
        'sweep': run.sweep,
        'epochs': len([row for row in run.epochs if row['split'] == 'train']),
        'diverged': run.diverged,
        'completed': run.completed,
        'summary': run.summary
    }


def serialize_sweep(name, runs):
    return {
        'sweep': name,
        'runs': [serialize_run(run) for run in runs]
    }


def serialize_cost(report: CostReport):
    document = report.to_dict()
    return {
        'trainer': document['trainer'],
        'areaUm2': document['area_um2']['total'],
        'energyPj': document['energy_pJ']['total'],
        'latencyNs': document['latency_ns']['total'],
        'utilization': document['utilization'],
        'tiles': document['floorplan']['tiles'],
        'adcCount': document['floorplan']['adc_count'],
        'wguCount': document['floorplan']['wgu_count']
    }
