"""Resistive crossbar backend and the ideal digital reference backend.

A weight matrix W (fan_out x fan_in) is stored transposed on the array:
rows are driven by the fan_in inputs and column currents give the
fan_out outputs. Each weight is a differential conductance pair.
"""
import enum
from contextlib import contextmanager
from dataclasses import dataclass, field
from math import ceil
from typing import Callable, Dict, List, Optional

import numpy as np

from src.domain.errors import ContractViolation, ShapeMismatchError
from src.domain.mathcore import Mat, Rng, as_mat, matmul
from src.util import logwrapper


@dataclass(frozen=True)
class CrossbarConfig:
    subarray_rows: int = 128
    subarray_cols: int = 128
    # None means an ideal converter.
    adc_bits: Optional[int] = 5
    g_min: float = 0.01
    g_max: float = 1.0
    # None means continuous conductance states.
    weight_bits: Optional[int] = 8
    d2d_sigma: float = 0.0
    c2c_sigma: float = 0.0
    wire_r: float = 0.0
    # None means range_headroom * max|w| at first programming. A headroom
    # below 1 saturates the largest weights at g_max.
    w_range: Optional[float] = None
    range_headroom: float = 1.0
    # Columns sharing one ADC.
    adc_mux: int = 8

    def __post_init__(self):
        if not 0 < self.g_min < self.g_max:
            raise ContractViolation(f'need 0 < g_min < g_max, got {self.g_min} and {self.g_max}')
        if self.subarray_rows < 1 or self.subarray_cols < 1:
            raise ContractViolation('subarray dimensions must be >= 1')
        if self.adc_bits is not None and self.adc_bits < 1:
            raise ContractViolation(f'adc_bits must be >= 1, got {self.adc_bits}')
        if self.weight_bits is not None and self.weight_bits < 1:
            raise ContractViolation(f'weight_bits must be >= 1, got {self.weight_bits}')
        if self.d2d_sigma < 0 or self.c2c_sigma < 0 or self.wire_r < 0:
            raise ContractViolation('variation sigmas and wire_r must be >= 0')
        if self.w_range is not None and self.w_range <= 0:
            raise ContractViolation(f'w_range must be positive, got {self.w_range}')
        if self.range_headroom <= 0 or self.adc_mux < 1:
            raise ContractViolation('range_headroom must be positive and adc_mux >= 1')

    def subarray_count(self, rows: int, cols: int) -> int:
        return ceil(rows / self.subarray_rows) * ceil(cols / self.subarray_cols)


class EventKind(str, enum.Enum):
    FORWARD_READ = 'forward_read'
    TRANSPOSED_READ = 'transposed_read'
    FEEDBACK_READ = 'feedback_read'
    GRADIENT_COMPUTE = 'gradient_compute'
    PROGRAM_WRITE = 'program_write'


# Layer 0 denotes the shared feedback array.
@dataclass(frozen=True)
class HardwareEvent:
    kind: EventKind
    layer: int
    rows: int
    cols: int
    subarrays: int
    vectors: int


class EventCounter:
    """Event sink totalling events, physical subarray reads and MACs per kind."""

    def __init__(self):
        self.totals: Dict[str, Dict[str, int]] = {}

    def __call__(self, event: HardwareEvent):
        entry = self.totals.setdefault(event.kind.value, {'events': 0, 'reads': 0, 'macs': 0})
        entry['events'] += 1
        entry['reads'] += event.vectors * event.subarrays
        entry['macs'] += event.rows * event.cols * event.vectors

    def count(self, kind: EventKind, measure: str = 'events') -> int:
        return self.totals.get(kind.value, {}).get(measure, 0)

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        return {kind: dict(entry) for kind, entry in sorted(self.totals.items())}


@dataclass
class CrossbarArray:
    rows: int
    cols: int
    g_pos: np.ndarray
    g_neg: np.ndarray
    target_pos: np.ndarray
    target_neg: np.ndarray
    # static device-to-device factors, drawn once
    s_pos: np.ndarray
    s_neg: np.ndarray
    w_range: float
    scale: float
    clipped: int = 0
    programs: int = 0
    effective_pos: np.ndarray = field(default=None, repr=False)
    effective_neg: np.ndarray = field(default=None, repr=False)


def _ir_factors(g: np.ndarray, cfg: CrossbarConfig) -> np.ndarray:
    if cfg.wire_r == 0:
        return np.ones_like(g)
    i_local = (np.arange(g.shape[0]) % cfg.subarray_rows)[:, None]
    j_local = (np.arange(g.shape[1]) % cfg.subarray_cols)[None, :]
    return 1.0 / (1.0 + cfg.wire_r * (i_local + j_local) * g / cfg.g_max)


def _refresh_effective(arr: CrossbarArray, cfg: CrossbarConfig):
    device_pos = arr.g_pos * arr.s_pos
    device_neg = arr.g_neg * arr.s_neg
    arr.effective_pos = device_pos * _ir_factors(device_pos, cfg)
    arr.effective_neg = device_neg * _ir_factors(device_neg, cfg)


def _snap(g: np.ndarray, cfg: CrossbarConfig) -> np.ndarray:
    if cfg.weight_bits is None:
        return g
    step = (cfg.g_max - cfg.g_min) / (2 ** cfg.weight_bits - 1)
    return cfg.g_min + np.rint((g - cfg.g_min) / step) * step


def program_weights(w, cfg: CrossbarConfig, rng: Rng, previous: Optional[CrossbarArray] = None) -> CrossbarArray:
    """Map w onto conductance pairs.

    With previous given, the array keeps its range and static factors and
    only cells whose snapped target changed receive a programming pulse.
    """
    stored = as_mat(w, 'weights').T
    rows, cols = stored.shape

    if previous is None:
        peak = float(np.max(np.abs(stored))) if stored.size else 0.0
        w_range = cfg.w_range if cfg.w_range is not None else (cfg.range_headroom * peak or 1.0)
        if cfg.d2d_sigma > 0:
            s_pos = np.maximum(1.0 + rng.normal(0.0, cfg.d2d_sigma, stored.shape), 0.0)
            s_neg = np.maximum(1.0 + rng.normal(0.0, cfg.d2d_sigma, stored.shape), 0.0)
        else:
            s_pos = np.ones(stored.shape)
            s_neg = np.ones(stored.shape)
        clipped, programs = 0, 0
    else:
        if (previous.rows, previous.cols) != (rows, cols):
            raise ShapeMismatchError('program_weights', (rows, cols), (previous.rows, previous.cols))
        w_range, s_pos, s_neg = previous.w_range, previous.s_pos, previous.s_neg
        clipped, programs = previous.clipped, previous.programs

    scale = (cfg.g_max - cfg.g_min) / w_range
    over = int(np.count_nonzero(np.abs(stored) > w_range))
    if over:
        logwrapper.debug('Weights beyond the representable range were clipped.', cells=over, w_range=w_range)

    target_pos = _snap(cfg.g_min + np.clip(stored, 0.0, w_range) * scale, cfg)
    target_neg = _snap(cfg.g_min + np.clip(-stored, 0.0, w_range) * scale, cfg)

    def pulse(target):
        if cfg.c2c_sigma == 0:
            return target
        return np.clip(target * (1.0 + rng.normal(0.0, cfg.c2c_sigma, target.shape)), cfg.g_min, cfg.g_max)

    programmed_pos, programmed_neg = pulse(target_pos), pulse(target_neg)
    if previous is None:
        g_pos, g_neg = programmed_pos, programmed_neg
    else:
        g_pos = np.where(target_pos != previous.target_pos, programmed_pos, previous.g_pos)
        g_neg = np.where(target_neg != previous.target_neg, programmed_neg, previous.g_neg)

    arr = CrossbarArray(rows=rows, cols=cols, g_pos=g_pos, g_neg=g_neg,
                        target_pos=target_pos, target_neg=target_neg,
                        s_pos=s_pos, s_neg=s_neg, w_range=w_range, scale=scale,
                        clipped=clipped + over, programs=programs + 1)
    _refresh_effective(arr, cfg)
    return arr


def readback(arr: CrossbarArray) -> Mat:
    # Controller view: programmed states, static device factors unseen.
    return ((arr.g_pos - arr.g_neg) / arr.scale).T


def ir_drop_attenuation(i: int, j: int, cfg: CrossbarConfig, arr: CrossbarArray, negative: bool = False) -> float:
    g = (arr.g_neg if negative else arr.g_pos)[i, j]
    i_local = i % cfg.subarray_rows
    j_local = j % cfg.subarray_cols
    return 1.0 / (1.0 + cfg.wire_r * (i_local + j_local) * g / cfg.g_max)


def full_scale(cfg: CrossbarConfig, driven_rows: int, transposed: bool = False) -> float:
    """Worst-case column current, V_max = 1 on every driven row at g_max.

    An array narrower than one subarray is laid out on a block of its own
    size, so its converters span only the rows it has.
    """
    block = cfg.subarray_cols if transposed else cfg.subarray_rows
    return min(block, driven_rows) * cfg.g_max


def adc_read(current, cfg: CrossbarConfig, full_scale: float = None):
    if full_scale is None:
        full_scale = cfg.subarray_rows * cfg.g_max
    current = np.asarray(current, dtype=np.float64)
    if cfg.adc_bits is None:
        return current
    top = 2 ** cfg.adc_bits - 1
    step = full_scale / top
    return np.clip(np.rint(current / step), 0, top) * step


def _analog_read(eff_pos, eff_neg, x, cfg: CrossbarConfig, block_in: int, block_out: int, full_scale: float) -> Mat:
    """Signed read of x through effective conductances (inputs x outputs).

    Inputs are normalized per vector to V_max = 1 and split into positive
    and negative voltage phases; each phase is read against both halves of
    the pair. Partial sums of the input blocks accumulate in ascending order.
    """
    n_in, n_out = eff_pos.shape
    x = as_mat(x, 'input')
    if x.shape[0] != n_in:
        raise ShapeMismatchError('analog read', x.shape, (n_in, n_out))

    peak = np.max(np.abs(x), axis=0) if x.size else np.zeros(x.shape[1])
    safe_peak = np.where(peak > 0, peak, 1.0)
    voltages = x / safe_peak
    phases = [(1.0, np.maximum(voltages, 0.0)), (-1.0, np.maximum(-voltages, 0.0))]

    out = np.zeros((n_out, x.shape[1]))
    for r0 in range(0, n_in, block_in):
        r1 = min(r0 + block_in, n_in)
        for c0 in range(0, n_out, block_out):
            c1 = min(c0 + block_out, n_out)
            g_pos = eff_pos[r0:r1, c0:c1].T
            g_neg = eff_neg[r0:r1, c0:c1].T
            partial = np.zeros((c1 - c0, x.shape[1]))
            for sign, v in phases:
                v_block = v[r0:r1]
                if not np.any(v_block):
                    continue
                current_pos = adc_read(g_pos @ v_block, cfg, full_scale)
                current_neg = adc_read(g_neg @ v_block, cfg, full_scale)
                partial = partial + sign * (current_pos - current_neg)
            out[c0:c1] = out[c0:c1] + partial
    return out * np.where(peak > 0, peak, 0.0)


def analog_matvec(arr: CrossbarArray, x, cfg: CrossbarConfig) -> Mat:
    out = _analog_read(arr.effective_pos, arr.effective_neg, x, cfg,
                       cfg.subarray_rows, cfg.subarray_cols, full_scale(cfg, arr.rows))
    return out / arr.scale


def analog_matvec_transposed(arr: CrossbarArray, x, cfg: CrossbarConfig) -> Mat:
    # Columns are driven and rows sensed through the rotated periphery.
    out = _analog_read(arr.effective_pos.T, arr.effective_neg.T, x, cfg,
                       cfg.subarray_cols, cfg.subarray_rows, full_scale(cfg, arr.cols, transposed=True))
    return out / arr.scale


def mean_matvec_error(cfg: CrossbarConfig, rows: int, cols: int, trials: int, rng: Rng) -> float:
    """Mean relative error of the analog read against the exact product.

    Trial t draws its matrix and input from rng.derive(t), so two configs
    probed with the same rng see identical instances.
    """
    errors = []
    for trial in range(trials):
        stream = rng.derive(trial)
        w = stream.uniform(-1.0, 1.0, (cols, rows))
        x = stream.uniform(0.0, 1.0, (rows, 1))
        arr = program_weights(w, cfg, stream.derive('program'))
        exact = w @ x
        approx = analog_matvec(arr, x, cfg)
        errors.append(np.linalg.norm(approx - exact) / np.linalg.norm(exact))
    return float(np.mean(errors))


EventSink = Callable[[HardwareEvent], None]


class Backend:
    """Compute substrate for the learning rules.

    Every call that maps to a physical operation reports a HardwareEvent to
    the attached sinks. Layers count from 1.
    """

    name = 'backend'

    def __init__(self, cfg: CrossbarConfig = None, sinks: List[EventSink] = None):
        self.cfg = cfg or CrossbarConfig()
        self.sinks: List[EventSink] = list(sinks or [])

    def add_sink(self, sink: EventSink):
        self.sinks.append(sink)

    def remove_sink(self, sink: EventSink):
        self.sinks.remove(sink)

    @contextmanager
    def attached(self, sink: EventSink):
        self.add_sink(sink)
        try:
            yield sink
        finally:
            self.remove_sink(sink)

    def emit(self, kind: EventKind, layer: int, rows: int, cols: int, vectors: int):
        if not self.sinks:
            return
        event = HardwareEvent(kind, layer, rows, cols, self.cfg.subarray_count(rows, cols), vectors)
        for sink in self.sinks:
            sink(event)

    def matvec(self, layer: int, w: Mat, x: Mat, record: bool = True) -> Mat:
        raise NotImplementedError

    def matvec_transposed(self, layer: int, w: Mat, x: Mat, record: bool = True) -> Mat:
        raise NotImplementedError

    def project_feedback(self, bank, e: Mat, record: bool = True) -> Mat:
        raise NotImplementedError

    def write(self, layer: int, w: Mat) -> Mat:
        raise NotImplementedError

    @staticmethod
    def _check(w: Mat, x: Mat, transposed: bool):
        expected = w.shape[0] if transposed else w.shape[1]
        if x.shape[0] != expected:
            raise ShapeMismatchError('matvec_transposed' if transposed else 'matvec', w.shape, x.shape)


class DigitalBackend(Backend):
    name = 'digital'

    def matvec(self, layer, w, x, record=True):
        self._check(w, x, False)
        if record:
            self.emit(EventKind.FORWARD_READ, layer, w.shape[1], w.shape[0], x.shape[1])
        return matmul(w, x, ordered=False)

    def matvec_transposed(self, layer, w, x, record=True):
        self._check(w, x, True)
        if record:
            self.emit(EventKind.TRANSPOSED_READ, layer, w.shape[1], w.shape[0], x.shape[1])
        return matmul(w.T, x, ordered=False)

    def project_feedback(self, bank, e, record=True):
        master = bank.master
        if record:
            self.emit(EventKind.FEEDBACK_READ, 0, master.shape[1], master.shape[0], e.shape[1])
        return matmul(master, e)

    def write(self, layer, w):
        self.emit(EventKind.PROGRAM_WRITE, layer, w.shape[1], w.shape[0], 1)
        return np.array(w, dtype=np.float64)


class AnalogBackend(Backend):
    """Crossbar backend. Each layer's array is programmed on first use."""

    name = 'analog'

    def __init__(self, cfg: CrossbarConfig = None, rng: Rng = None, sinks: List[EventSink] = None):
        super().__init__(cfg, sinks)
        self.rng = rng or Rng(0)
        self._program_rng = self.rng.derive('program')
        self.arrays: Dict[int, CrossbarArray] = {}
        self.feedback: Optional[CrossbarArray] = None
        self._feedback_fingerprint = None

    def _array(self, layer: int, w: Mat) -> CrossbarArray:
        if layer not in self.arrays:
            self.arrays[layer] = program_weights(w, self.cfg, self._program_rng)
        arr = self.arrays[layer]
        if (arr.cols, arr.rows) != w.shape:
            raise ShapeMismatchError(f'layer {layer} array', (arr.cols, arr.rows), w.shape)
        return arr

    def matvec(self, layer, w, x, record=True):
        self._check(w, x, False)
        arr = self._array(layer, w)
        if record:
            self.emit(EventKind.FORWARD_READ, layer, arr.rows, arr.cols, x.shape[1])
        return analog_matvec(arr, x, self.cfg)

    def matvec_transposed(self, layer, w, x, record=True):
        self._check(w, x, True)
        arr = self._array(layer, w)
        if record:
            self.emit(EventKind.TRANSPOSED_READ, layer, arr.rows, arr.cols, x.shape[1])
        return analog_matvec_transposed(arr, x, self.cfg)

    def project_feedback(self, bank, e, record=True):
        fingerprint = bank.fingerprint()
        if self.feedback is None or fingerprint != self._feedback_fingerprint:
            self.feedback = program_weights(bank.master, self.cfg, self.rng.derive('feedback'))
            self._feedback_fingerprint = fingerprint
        if record:
            self.emit(EventKind.FEEDBACK_READ, 0, self.feedback.rows, self.feedback.cols, e.shape[1])
        return analog_matvec(self.feedback, e, self.cfg)

    def write(self, layer, w):
        arr = program_weights(w, self.cfg, self._program_rng, previous=self.arrays.get(layer))
        self.arrays[layer] = arr
        self.emit(EventKind.PROGRAM_WRITE, layer, arr.rows, arr.cols, 1)
        return readback(arr)
