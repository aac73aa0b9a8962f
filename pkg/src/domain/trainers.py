import enum
import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.domain.analog import Backend, EventCounter, EventKind
from src.domain.errors import ContractViolation, ShapeMismatchError
from src.domain.mathcore import Mat, Quantizer, Rng, hadamard, matmul, quantize
from src.domain.network import (Mlp, Topology, activation_derivative, cross_entropy, forward,
                                one_hot, predict, softmax)
from src.util import logwrapper
from src.util.dataio import batches


class TrainerKind(str, enum.Enum):
    BP = 'bp'
    DFA = 'dfa'


@dataclass(frozen=True)
class FeedbackBank:
    """Fixed random feedback shared by all hidden layers.

    B_i is the top d_i rows of master, so every layer reads a slice of the
    same physical array.
    """
    master: np.ndarray

    def __post_init__(self):
        master = np.array(self.master, dtype=np.float64)
        if master.ndim != 2:
            raise ContractViolation('feedback master must be 2-D')
        master.setflags(write=False)
        object.__setattr__(self, 'master', master)

    @classmethod
    def create(cls, topology: Topology, rng: Rng) -> 'FeedbackBank':
        bound = 1.0 / np.sqrt(topology.classes)
        return cls(rng.uniform(-bound, bound, (topology.max_hidden, topology.classes)))

    def slice(self, width: int) -> np.ndarray:
        if width > self.master.shape[0]:
            raise ShapeMismatchError('feedback slice', (width, self.master.shape[1]), self.master.shape)
        return self.master[:width]

    def fingerprint(self) -> str:
        return hashlib.sha256(self.master.tobytes()).hexdigest()


@dataclass(frozen=True)
class Precisions:
    weight: Optional[Quantizer] = None
    activation: Optional[Quantizer] = None
    error: Optional[Quantizer] = None
    gradient: Optional[Quantizer] = None


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.05
    batch_size: int = 128
    epochs: int = 1
    seed: int = 0
    precisions: Precisions = field(default_factory=Precisions)
    # Re-quantize every BP delta, not only e.
    bp_requantize: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractViolation(f'learning_rate must be >= 0, got {self.learning_rate}')
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractViolation('batch_size must be >= 1 and epochs >= 0')


def output_error(logits: Mat, targets: Mat) -> Mat:
    if logits.shape != targets.shape:
        raise ShapeMismatchError('output_error', logits.shape, targets.shape)
    return softmax(logits) - targets


def bp_backward(trace, mlp: Mlp, e: Mat, backend: Backend, error_quantizer: Optional[Quantizer] = None,
                requantize: bool = True, rng: Optional[Rng] = None) -> List[Mat]:
    """Backpropagate e through the transposed forward weights.

    Returns [δa_1 .. δa_N]. The error quantizer snaps e and, with
    requantize, every hidden delta again after its Hadamard product.
    """
    if e.shape != trace.logits.shape:
        raise ShapeMismatchError('bp_backward', e.shape, trace.logits.shape)
    if error_quantizer is not None:
        e = quantize(e, error_quantizer, rng)

    deltas: List[Optional[Mat]] = [None] * mlp.depth
    deltas[-1] = e
    for index in range(mlp.depth - 2, -1, -1):
        carried = backend.matvec_transposed(index + 2, mlp.weights[index + 1], deltas[index + 1])
        delta = hadamard(carried, activation_derivative(trace.pre_activations[index], mlp.topology.activation))
        if error_quantizer is not None and requantize:
            delta = quantize(delta, error_quantizer, rng)
        deltas[index] = delta
    return deltas


def dfa_hidden_delta(projection: Mat, pre_activation: Mat, activation: str) -> Mat:
    return hadamard(projection[:pre_activation.shape[0]], activation_derivative(pre_activation, activation))


def dfa_backward(trace, bank: FeedbackBank, e: Mat, backend: Backend, activation: str = 'relu',
                 error_quantizer: Optional[Quantizer] = None, rng: Optional[Rng] = None,
                 executor=None) -> List[Mat]:
    """Project e straight to every hidden layer through its feedback slice.

    e is quantized once. Hidden deltas are independent of each other; with an
    executor they are computed concurrently and gathered in layer order.
    """
    if e.shape != trace.logits.shape:
        raise ShapeMismatchError('dfa_backward', e.shape, trace.logits.shape)
    if error_quantizer is not None:
        e = quantize(e, error_quantizer, rng)

    hidden = trace.pre_activations[:-1]
    if not hidden:
        return [e]
    if bank.master.shape[1] != e.shape[0]:
        raise ShapeMismatchError('feedback projection', bank.master.shape, e.shape)

    projection = backend.project_feedback(bank, e)

    def compute(a):
        return dfa_hidden_delta(projection, a, activation)

    if executor is not None:
        deltas = list(executor.map(compute, hidden))
    else:
        deltas = [compute(a) for a in hidden]
    return deltas + [e]


def apply_updates(mlp: Mlp, deltas: Sequence[Mat], trace, hp: HyperParams, backend: Backend,
                  rng: Optional[Rng] = None) -> Mlp:
    """One SGD step W_i <- q_w(W_i - lr * q_g(δa_i h_{i-1}^T / batch)).

    The new weights are written through the backend, which returns what
    the hardware actually holds afterwards.
    """
    if len(deltas) != mlp.depth:
        raise ShapeMismatchError('apply_updates', (len(deltas),), (mlp.depth,))

    batch = trace.batch_size
    precisions = hp.precisions
    updated = []
    for layer, (w, delta, h_prev) in enumerate(zip(mlp.weights, deltas, trace.activations), start=1):
        gradient = matmul(delta, h_prev.T, ordered=False) / batch
        backend.emit(EventKind.GRADIENT_COMPUTE, layer, w.shape[1], w.shape[0], batch)
        if precisions.gradient is not None:
            gradient = quantize(gradient, precisions.gradient, rng)
        stepped = w - hp.learning_rate * gradient
        if precisions.weight is not None:
            stepped = quantize(stepped, precisions.weight, rng)
        updated.append(backend.write(layer, stepped))
    return mlp.with_weights(updated)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    wall_seconds: float = 0.0


@dataclass(frozen=True)
class Divergence:
    epoch: int
    batch: int
    loss: float
    reason: str


@dataclass
class TrainingHistory:
    rows: List[HistoryRow] = field(default_factory=list)
    divergence: Optional[Divergence] = None
    model: Optional[Mlp] = None
    bank: Optional[FeedbackBank] = None
    # hardware event totals per epoch
    events: List[dict] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.divergence is not None

    def split(self, split: str) -> List[HistoryRow]:
        return [row for row in self.rows if row.split == split]

    def final(self, split: str = 'test') -> Optional[HistoryRow]:
        rows = self.split(split)
        return rows[-1] if rows else None


class TrainingObserver:

    def on_epoch_end(self, epoch: int, train_row: HistoryRow, test_row: Optional[HistoryRow]):
        pass

    def on_divergence(self, divergence: Divergence):
        pass


def evaluate(mlp: Mlp, dataset, backend: Backend, batch_size: int = 512,
             activation_quantizer: Optional[Quantizer] = None, rng: Optional[Rng] = None):
    loss_sum, correct = 0.0, 0
    for images, labels in batches(dataset, batch_size):
        trace = forward(mlp, images, backend, activation_quantizer, rng, record=False)
        loss_sum += cross_entropy(trace.logits, labels) * labels.size
        correct += int(np.count_nonzero(predict(trace) == labels))
    return loss_sum / dataset.samples, correct / dataset.samples


def train(mlp: Mlp, train_set, test_set, hp: HyperParams, kind: TrainerKind, backend: Backend,
          observers: Sequence[TrainingObserver] = (), bank: FeedbackBank = None, workers: int = 1,
          record_wall_time: bool = False) -> TrainingHistory:
    kind = TrainerKind(kind)
    root = Rng(hp.seed)
    shuffle_rng = root.derive('shuffle')
    quant_rng = root.derive('quantization')
    if bank is None:
        bank = FeedbackBank.create(mlp.topology, root.derive('feedback'))

    precisions = hp.precisions
    history = TrainingHistory(bank=bank)
    executor = ThreadPoolExecutor(max_workers=workers) if kind is TrainerKind.DFA and workers > 1 else None

    try:
        for epoch in range(1, hp.epochs + 1):
            started = time.perf_counter()
            counter = EventCounter()
            loss_sum, correct, seen = 0.0, 0, 0

            with backend.attached(counter):
                for index, (images, labels) in enumerate(batches(train_set, hp.batch_size, shuffle_rng)):
                    trace = forward(mlp, images, backend, precisions.activation, quant_rng)
                    with np.errstate(over='ignore', invalid='ignore'):
                        loss = cross_entropy(trace.logits, labels)
                    if not np.isfinite(loss):
                        history.divergence = Divergence(epoch, index, float(loss), 'non-finite loss')
                        break

                    e = output_error(trace.logits, one_hot(labels, mlp.topology.classes))
                    if kind is TrainerKind.BP:
                        deltas = bp_backward(trace, mlp, e, backend, precisions.error, hp.bp_requantize, quant_rng)
                    else:
                        deltas = dfa_backward(trace, bank, e, backend, mlp.topology.activation,
                                              precisions.error, quant_rng, executor)
                    try:
                        mlp = apply_updates(mlp, deltas, trace, hp, backend, quant_rng)
                    except ContractViolation:
                        history.divergence = Divergence(epoch, index, float(loss), 'non-finite weights')
                        break

                    loss_sum += loss * labels.size
                    correct += int(np.count_nonzero(predict(trace) == labels))
                    seen += labels.size

            if history.divergence is not None:
                logwrapper.error('Training diverged.', epoch=epoch, batch=history.divergence.batch,
                                 reason=history.divergence.reason)
                for observer in observers:
                    observer.on_divergence(history.divergence)
                break

            wall = time.perf_counter() - started if record_wall_time else 0.0
            train_row = HistoryRow(epoch, 'train', loss_sum / max(seen, 1), correct / max(seen, 1), wall)
            history.rows.append(train_row)
            test_row = None
            if test_set is not None:
                test_loss, test_accuracy = evaluate(mlp, test_set, backend, hp.batch_size,
                                                    precisions.activation, quant_rng)
                test_row = HistoryRow(epoch, 'test', test_loss, test_accuracy, wall)
                history.rows.append(test_row)
            history.events.append(counter.snapshot())

            logwrapper.info('Epoch finished.', trainer=kind.value, epoch=epoch,
                            train_loss=f'{train_row.loss:.4f}', train_acc=f'{train_row.accuracy:.4f}',
                            test_acc='-' if test_row is None else f'{test_row.accuracy:.4f}')
            for observer in observers:
                observer.on_epoch_end(epoch, train_row, test_row)
    finally:
        if executor is not None:
            executor.shutdown()

    history.model = mlp
    return history


def epochs_to_converge(history: TrainingHistory, split: str = 'test', tolerance: float = 0.02) -> Optional[int]:
    rows = history.split(split)
    if not rows:
        return None
    final = rows[-1].accuracy
    for row in rows:
        if row.accuracy >= final - tolerance:
            return row.epoch
    return rows[-1].epoch
