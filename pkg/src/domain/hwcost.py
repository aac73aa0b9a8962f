"""Floorplan construction and closed-form area, energy and latency models.

Counts are exact integers derived from the topology; unit costs come from a
versioned profile. One cell is one synapse (a differential pair).
"""
import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from math import ceil
from typing import Dict, List, Optional, Tuple

import pandas as pd

from src.domain.analog import CrossbarConfig, EventKind
from src.domain.errors import ContractViolation, ProfileError
from src.domain.network import Topology
from src.domain.trainers import TrainerKind

PROFILE_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'profiles')
PROFILE_VERSION = 1

AREA_CATEGORIES = ('cim_cells', 'adc', 'ic', 'accumulation', 'wgu', 'buffer', 'other')
ENERGY_CATEGORIES = ('forward_reads', 'backward_reads', 'gradient_compute', 'writes',
                     'on_chip_buffer', 'off_chip_buffer')
LATENCY_PHASES = ('forward', 'error_transport', 'gradient_compute', 'write', 'buffering')


@dataclass(frozen=True)
class UnitCosts:
    # area, um^2
    cell_area: float = 0.1
    adc_area_base: float = 150.0
    ic_area: float = 50000.0
    accum_area: float = 2000.0
    wgu_area: float = 0.65
    buffer_area: float = 4000.0
    other_area: float = 200000.0
    # energy, pJ
    adc_energy_base: float = 0.25
    cell_read_energy: float = 0.001
    write_energy: float = 1.0
    wgu_energy: float = 0.01
    buffer_energy: float = 0.04
    off_chip_factor: float = 100.0
    # latency, ns
    read_latency: float = 10.0
    write_latency: float = 2.5
    wgu_latency: float = 1e-4
    buffer_latency: float = 0.005
    # ADC costs double per bit above this precision
    adc_base_bits: int = 3
    act_bits: int = 8
    err_bits: int = 8
    grad_bits: int = 16

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ProfileError(f'unit_costs.{f.name}', 'unit costs must be >= 0')
        if self.off_chip_factor < 1:
            raise ProfileError('unit_costs.off_chip_factor', 'off-chip access must cost at least on-chip')

    def adc_area(self, bits: int) -> float:
        return self.adc_area_base * 2.0 ** (bits - self.adc_base_bits)

    def adc_energy(self, bits: int) -> float:
        return self.adc_energy_base * 2.0 ** (bits - self.adc_base_bits)

    @property
    def off_chip_energy(self) -> float:
        return self.buffer_energy * self.off_chip_factor


def profile_path(name_or_path: str = 'default') -> str:
    path = name_or_path
    if not os.path.exists(path):
        path = os.path.join(PROFILE_DIR, f'{name_or_path}.ini')
    if not os.path.exists(path):
        raise ProfileError('costs.profile', f'unknown profile {name_or_path!r}')
    return path


def load_profile(name_or_path: str = 'default') -> UnitCosts:
    """Read a UnitCosts profile: a [unit_costs] section of key = value lines."""
    path = profile_path(name_or_path)

    parser = configparser.ConfigParser(inline_comment_prefixes=(';', '#'))
    try:
        parser.read(path, encoding='utf-8')
    except configparser.Error as e:
        raise ProfileError('costs.profile', f'{path}: {e}')
    if not parser.has_section('unit_costs'):
        raise ProfileError('costs.profile', f'{path}: missing [unit_costs] section')

    section = parser['unit_costs']
    version = section.get('profile_version')
    if version is None or version.strip() != str(PROFILE_VERSION):
        raise ProfileError('unit_costs.profile_version', f'{path}: expected profile_version = {PROFILE_VERSION}')

    known = {f.name: f.type for f in fields(UnitCosts)}
    values = {}
    for key, raw in section.items():
        if key == 'profile_version':
            continue
        if key not in known:
            raise ProfileError(f'unit_costs.{key}', f'{path}: unknown unit cost')
        try:
            values[key] = int(raw) if known[key] in (int, 'int') else float(raw)
        except ValueError:
            raise ProfileError(f'unit_costs.{key}', f'{path}: not a number: {raw!r}')
    return UnitCosts(**values)


@dataclass(frozen=True)
class LayerPlan:
    layer: int
    rows: int
    cols: int
    subarray_grid: Tuple[int, int]
    tile_grid: Tuple[int, int]
    adc_count: int
    transposable: bool

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    @property
    def subarrays(self) -> int:
        return self.subarray_grid[0] * self.subarray_grid[1]

    @property
    def tiles(self) -> int:
        return self.tile_grid[0] * self.tile_grid[1]


@dataclass(frozen=True)
class Floorplan:
    topology: Topology
    kind: TrainerKind
    crossbar: CrossbarConfig
    tile_dim: int
    batch_size: int
    layers: Tuple[LayerPlan, ...]
    wgu_count: int
    wgu_capacity: int
    feedback_cells: int
    feedback_cells_logical: int
    feedback_subarrays: int
    feedback_adc_count: int
    activation_buffer_words: int
    error_buffer_words: int

    @property
    def adc_count(self) -> int:
        return sum(plan.adc_count for plan in self.layers)

    @property
    def tiles(self) -> int:
        return sum(plan.tiles for plan in self.layers)

    @property
    def subarrays(self) -> int:
        return sum(plan.subarrays for plan in self.layers)

    @property
    def weight_cells(self) -> int:
        return sum(plan.cells for plan in self.layers)

    @property
    def provisioned_cells(self) -> int:
        return self.tiles * self.tile_dim * self.tile_dim

    @property
    def utilization(self) -> float:
        return self.weight_cells / self.provisioned_cells

    def summary(self) -> dict:
        return {
            'trainer': self.kind.value,
            'layer_dims': list(self.topology.layer_dims),
            'tile_dim': self.tile_dim,
            'tiles': self.tiles,
            'subarrays': self.subarrays,
            'adc_count': self.adc_count,
            'wgu_count': self.wgu_count,
            'wgu_capacity': self.wgu_capacity,
            'feedback_cells': self.feedback_cells,
            'utilization': self.utilization,
            'layers': [
                {
                    'layer': plan.layer,
                    'rows': plan.rows,
                    'cols': plan.cols,
                    'subarray_grid': list(plan.subarray_grid),
                    'tile_grid': list(plan.tile_grid),
                    'tiles': plan.tiles,
                    'adc_count': plan.adc_count,
                    'transposable': plan.transposable,
                }
                for plan in self.layers
            ],
        }


def build_floorplan(topology: Topology, kind: TrainerKind, cfg: CrossbarConfig, tile_dim: int = 1024,
                    batch_size: int = 128, dfa_parallelism: Optional[int] = None) -> Floorplan:
    """Map every weight layer onto subarrays and tiles.

    BP arrays get the rotated second periphery, doubling their ADCs, and
    share one WGU. DFA gets one WGU per layer (or dfa_parallelism of them)
    plus one feedback array sized by the widest hidden layer.
    """
    kind = TrainerKind(kind)
    if tile_dim < 1:
        raise ContractViolation(f'tile_dim must be >= 1, got {tile_dim}')
    depth = topology.depth
    if dfa_parallelism is not None and not 1 <= dfa_parallelism <= depth:
        raise ContractViolation(f'dfa_parallelism must be within [1, {depth}], got {dfa_parallelism}')

    transposable = kind is TrainerKind.BP
    adcs_per_subarray = ceil(cfg.subarray_cols / cfg.adc_mux) * (2 if transposable else 1)

    layers = []
    for layer in range(1, depth + 1):
        rows, cols = topology.layer_dims[layer - 1], topology.layer_dims[layer]
        subarray_grid = (ceil(rows / cfg.subarray_rows), ceil(cols / cfg.subarray_cols))
        tile_grid = (ceil(rows / tile_dim), ceil(cols / tile_dim))
        layers.append(LayerPlan(layer, rows, cols, subarray_grid, tile_grid,
                                subarray_grid[0] * subarray_grid[1] * adcs_per_subarray, transposable))

    classes, widest = topology.classes, max(topology.layer_dims)
    has_feedback = kind is TrainerKind.DFA and depth >= 2
    feedback_subarrays = cfg.subarray_count(classes, topology.max_hidden) if has_feedback else 0

    if kind is TrainerKind.BP:
        wgu_count = 1
    else:
        wgu_count = dfa_parallelism or depth

    return Floorplan(
        topology=topology,
        kind=kind,
        crossbar=cfg,
        tile_dim=tile_dim,
        batch_size=batch_size,
        layers=tuple(layers),
        wgu_count=wgu_count,
        wgu_capacity=max(plan.cells for plan in layers),
        feedback_cells=topology.max_hidden * classes if has_feedback else 0,
        feedback_cells_logical=sum(topology.hidden_dims) * classes if has_feedback else 0,
        feedback_subarrays=feedback_subarrays,
        feedback_adc_count=feedback_subarrays * ceil(cfg.subarray_cols / cfg.adc_mux),
        activation_buffer_words=2 * batch_size * widest,
        error_buffer_words=batch_size * (widest if kind is TrainerKind.BP else classes),
    )


@dataclass(frozen=True)
class EpochSchedule:
    samples: int
    batch_size: int
    epochs: int = 1

    def groups(self) -> List[Tuple[int, int]]:
        # (batch size, number of such batches) per epoch
        full, last = divmod(self.samples, self.batch_size)
        return [(size, count) for size, count in ((self.batch_size, full), (last, 1)) if size and count]


def _adc_bits(fp: Floorplan, uc: UnitCosts) -> int:
    bits = fp.crossbar.adc_bits
    return uc.adc_base_bits if bits is None else bits


def estimate_area(fp: Floorplan, uc: UnitCosts) -> Tuple[Dict[str, float], Dict[str, float]]:
    adc_area = uc.adc_area(_adc_bits(fp, uc))
    feedback_cell_area = fp.feedback_cells * uc.cell_area
    feedback_periphery = fp.feedback_adc_count * adc_area + fp.feedback_subarrays * uc.accum_area
    activation_buffer = fp.activation_buffer_words * uc.act_bits / 8 / 1024 * uc.buffer_area
    error_buffer = fp.error_buffer_words * uc.err_bits / 8 / 1024 * uc.buffer_area

    area = {
        'cim_cells': fp.weight_cells * uc.cell_area + feedback_cell_area,
        'adc': fp.adc_count * adc_area,
        'ic': fp.tiles * uc.ic_area,
        'accumulation': fp.subarrays * uc.accum_area,
        'wgu': fp.wgu_count * uc.wgu_area * fp.wgu_capacity,
        'buffer': activation_buffer + error_buffer,
        'other': uc.other_area + feedback_periphery,
    }
    lines = {
        'feedback_cell_area_um2': feedback_cell_area,
        'feedback_periphery_um2': feedback_periphery,
        'activation_buffer_um2': activation_buffer,
        'error_buffer_um2': error_buffer,
    }
    return area, lines


def _read_counts(plan: LayerPlan, cfg: CrossbarConfig, transposed: bool) -> Tuple[int, int]:
    # (cells touched, ADC conversions) per input vector
    if transposed:
        return plan.cells, plan.subarray_grid[1] * plan.rows
    return plan.cells, plan.subarray_grid[0] * plan.cols


def _feedback_counts(fp: Floorplan) -> Tuple[int, int]:
    classes, hidden = fp.topology.classes, fp.topology.max_hidden
    return classes * hidden, ceil(classes / fp.crossbar.subarray_rows) * hidden


def buffer_bits(plan: LayerPlan, uc: UnitCosts, vectors: int) -> Tuple[int, int]:
    """Buffer traffic of one layer for one batch, as (forward, backward) bits.

    Forward loads h_{i-1} and stores a_i. Backward reloads both, stores and
    loads δa_i, and writes and reads the gradient tile. Both rules move the
    same data.
    """
    activations = vectors * (plan.rows + plan.cols) * uc.act_bits
    backward = activations + 2 * vectors * plan.cols * uc.err_bits + 2 * plan.cells * uc.grad_bits
    return activations, backward


def buffer_traffic_bits(fp: Floorplan, uc: UnitCosts, schedule: EpochSchedule) -> int:
    total = 0
    for vectors, count in schedule.groups():
        total += count * sum(sum(buffer_bits(plan, uc, vectors)) for plan in fp.layers)
    return schedule.epochs * total


def _batch_energy(fp: Floorplan, uc: UnitCosts, vectors: int) -> Dict[str, float]:
    adc = uc.adc_energy(_adc_bits(fp, uc))
    cfg = fp.crossbar

    forward = 0.0
    for plan in fp.layers:
        cells, conversions = _read_counts(plan, cfg, False)
        forward += vectors * (cells * uc.cell_read_energy + conversions * adc)

    backward = 0.0
    if fp.kind is TrainerKind.BP:
        for plan in fp.layers[1:]:
            cells, conversions = _read_counts(plan, cfg, True)
            backward += vectors * (cells * uc.cell_read_energy + conversions * adc)
    elif fp.feedback_cells:
        cells, conversions = _feedback_counts(fp)
        backward += vectors * (cells * uc.cell_read_energy + conversions * adc)

    bits = sum(sum(buffer_bits(plan, uc, vectors)) for plan in fp.layers)
    return {
        'forward_reads': forward,
        'backward_reads': backward,
        'gradient_compute': sum(vectors * plan.cells * uc.wgu_energy for plan in fp.layers),
        'writes': sum(plan.cells * uc.write_energy for plan in fp.layers),
        'on_chip_buffer': bits * uc.buffer_energy,
        'off_chip_buffer': bits * uc.off_chip_energy,
    }


def estimate_energy(fp: Floorplan, uc: UnitCosts, schedule: EpochSchedule) -> Dict[str, float]:
    energy = {category: 0.0 for category in ENERGY_CATEGORIES}
    for vectors, count in schedule.groups():
        batch = _batch_energy(fp, uc, vectors)
        for category in ENERGY_CATEGORIES:
            energy[category] += count * batch[category]
    return {category: schedule.epochs * value for category, value in energy.items()}


def _lpt_schedule(loads: List[float], machines: int) -> List[List[int]]:
    # Longest processing time first; ties go to the lower layer / machine index.
    order = sorted(range(len(loads)), key=lambda i: (-loads[i], i))
    assigned: List[List[int]] = [[] for _ in range(machines)]
    totals = [0.0] * machines
    for i in order:
        target = min(range(machines), key=lambda m: (totals[m], m))
        assigned[target].append(i)
        totals[target] += loads[i]
    return assigned


def _batch_latency(fp: Floorplan, uc: UnitCosts, vectors: int) -> Tuple[Dict[str, float], float]:
    depth = len(fp.layers)
    forward_buffering = sum(buffer_bits(plan, uc, vectors)[0] * uc.buffer_latency for plan in fp.layers)
    gradient = [vectors * plan.cells * uc.wgu_latency for plan in fp.layers]
    write = [plan.rows * uc.write_latency for plan in fp.layers]
    buffering = [buffer_bits(plan, uc, vectors)[1] * uc.buffer_latency for plan in fp.layers]

    if fp.kind is TrainerKind.BP:
        path = list(range(depth))
        transport = (depth - 1) * vectors * uc.read_latency
    else:
        stages = [gradient[i] + write[i] + buffering[i] for i in range(depth)]
        machines = _lpt_schedule(stages, fp.wgu_count)
        loads = [sum(stages[i] for i in machine) for machine in machines]
        critical = max(range(len(machines)), key=lambda m: (loads[m], -m))
        path = sorted(machines[critical])
        transport = vectors * uc.read_latency if depth >= 2 else 0.0

    latency = {
        'forward': depth * vectors * uc.read_latency,
        'error_transport': transport,
        'gradient_compute': sum(gradient[i] for i in path),
        'write': sum(write[i] for i in path),
        'buffering': forward_buffering + sum(buffering[i] for i in path),
    }
    backward = transport + sum(gradient[i] + write[i] + buffering[i] for i in path)
    return latency, backward


def estimate_latency(fp: Floorplan, uc: UnitCosts, schedule: EpochSchedule) -> Tuple[Dict[str, float], float]:
    """Latency by phase plus the backward (error, gradient, write) latency.

    Forward is sequential for both rules. BP's backward walks the layers;
    DFA broadcasts the error once and then runs its per-layer stages in
    parallel on its WGUs, layers reaching separate DRAM blocks.
    """
    latency = {phase: 0.0 for phase in LATENCY_PHASES}
    backward = 0.0
    for vectors, count in schedule.groups():
        batch, batch_backward = _batch_latency(fp, uc, vectors)
        for phase in LATENCY_PHASES:
            latency[phase] += count * batch[phase]
        backward += count * batch_backward
    return {phase: schedule.epochs * value for phase, value in latency.items()}, schedule.epochs * backward


def _total(values: Dict[str, float], order) -> float:
    return sum(values[key] for key in order)


@dataclass
class CostReport:
    trainer: str
    area: Dict[str, float]
    energy: Dict[str, float]
    latency: Dict[str, float]
    utilization: float
    floorplan: dict
    lines: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def area_total(self) -> float:
        return _total(self.area, AREA_CATEGORIES)

    @property
    def energy_total(self) -> float:
        return _total(self.energy, ENERGY_CATEGORIES)

    @property
    def latency_total(self) -> float:
        return _total(self.latency, LATENCY_PHASES)

    def to_dict(self) -> dict:
        def section(values, order, total):
            out = {key: values[key] for key in order}
            out['total'] = total
            return out

        return {
            'trainer': self.trainer,
            'area_um2': section(self.area, AREA_CATEGORIES, self.area_total),
            'energy_pJ': section(self.energy, ENERGY_CATEGORIES, self.energy_total),
            'latency_ns': section(self.latency, LATENCY_PHASES, self.latency_total),
            'utilization': self.utilization,
            'floorplan': self.floorplan,
            'lines': dict(self.lines),
            'notes': list(self.notes),
        }

    def to_frame(self) -> pd.DataFrame:
        records = []
        for metric, values, order, total in (('area_um2', self.area, AREA_CATEGORIES, self.area_total),
                                             ('energy_pJ', self.energy, ENERGY_CATEGORIES, self.energy_total),
                                             ('latency_ns', self.latency, LATENCY_PHASES, self.latency_total)):
            records.extend({'metric': metric, 'category': key, 'value': values[key]} for key in order)
            records.append({'metric': metric, 'category': 'total', 'value': total})
        records.extend({'metric': 'line', 'category': key, 'value': value} for key, value in self.lines.items())
        return pd.DataFrame.from_records(records, columns=['metric', 'category', 'value'])


def cost_report(fp: Floorplan, uc: UnitCosts, schedule: EpochSchedule) -> CostReport:
    area, area_lines = estimate_area(fp, uc)
    energy = estimate_energy(fp, uc, schedule)
    latency, backward = estimate_latency(fp, uc, schedule)
    per_epoch = EpochSchedule(schedule.samples, schedule.batch_size, 1)
    epoch_latency, _ = estimate_latency(fp, uc, per_epoch)

    report = CostReport(trainer=fp.kind.value, area=area, energy=energy, latency=latency,
                        utilization=fp.utilization, floorplan=fp.summary())
    area_total, energy_total, latency_total = report.area_total, report.energy_total, report.latency_total

    def share(part, whole):
        return part / whole if whole else 0.0

    report.lines.update({
        'weight_cells': fp.weight_cells,
        'feedback_cells': fp.feedback_cells,
        'feedback_cells_logical': fp.feedback_cells_logical,
        'feedback_cell_share': share(area_lines['feedback_cell_area_um2'], area_total),
        'adc_count': fp.adc_count,
        'wgu_count': fp.wgu_count,
        'tiles': fp.tiles,
        'subarrays': fp.subarrays,
        'buffer_traffic_bits': buffer_traffic_bits(fp, uc, schedule),
        'off_chip_energy_share': share(energy['off_chip_buffer'], energy_total),
        'buffering_latency_share': share(latency['buffering'], latency_total),
        'parallelizable_latency_share': share(latency['gradient_compute'] + latency['write']
                                              + latency['buffering'] - _forward_buffering(fp, uc, schedule),
                                              latency_total),
        'backward_latency_ns': backward,
        'latency_per_epoch_ns': _total(epoch_latency, LATENCY_PHASES),
    })
    report.lines.update(area_lines)
    if fp.crossbar.adc_bits is None:
        report.notes.append(f'ideal ADC costed at {uc.adc_base_bits} bits')
    return report


def _forward_buffering(fp: Floorplan, uc: UnitCosts, schedule: EpochSchedule) -> float:
    total = 0.0
    for vectors, count in schedule.groups():
        total += count * sum(buffer_bits(plan, uc, vectors)[0] * uc.buffer_latency for plan in fp.layers)
    return schedule.epochs * total


def epoch_events(topology: Topology, kind: TrainerKind, cfg: CrossbarConfig, samples: int,
                 batch_size: int) -> Dict[str, Dict[str, int]]:
    """Hardware events of one training epoch, in the EventCounter layout."""
    kind = TrainerKind(kind)
    totals: Dict[str, Dict[str, int]] = {}

    def add(event_kind: EventKind, rows: int, cols: int, vectors: int, count: int):
        entry = totals.setdefault(event_kind.value, {'events': 0, 'reads': 0, 'macs': 0})
        entry['events'] += count
        entry['reads'] += count * vectors * cfg.subarray_count(rows, cols)
        entry['macs'] += count * rows * cols * vectors

    schedule = EpochSchedule(samples, batch_size)
    for vectors, count in schedule.groups():
        for layer in range(1, topology.depth + 1):
            rows, cols = topology.layer_dims[layer - 1], topology.layer_dims[layer]
            add(EventKind.FORWARD_READ, rows, cols, vectors, count)
            if kind is TrainerKind.BP and layer >= 2:
                add(EventKind.TRANSPOSED_READ, rows, cols, vectors, count)
            add(EventKind.GRADIENT_COMPUTE, rows, cols, vectors, count)
            add(EventKind.PROGRAM_WRITE, rows, cols, 1, count)
        if kind is TrainerKind.DFA and topology.depth >= 2:
            add(EventKind.FEEDBACK_READ, topology.classes, topology.max_hidden, vectors, count)
    return {key: totals[key] for key in sorted(totals)}


def profile_as_dict(uc: UnitCosts) -> dict:
    return asdict(uc)
