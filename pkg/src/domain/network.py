from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.domain.errors import ContractViolation, ShapeMismatchError
from src.domain.mathcore import Mat, Quantizer, Rng, as_mat, quantize

ACTIVATIONS = ('relu', 'tanh', 'linear')


@dataclass(frozen=True)
class Topology:
    layer_dims: Tuple[int, ...]
    activation: str = 'relu'

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, 'layer_dims', dims)
        if len(dims) < 2:
            raise ContractViolation('a topology needs an input and an output dimension')
        if any(d < 1 for d in dims):
            raise ContractViolation(f'all layer dimensions must be >= 1, got {dims}')
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f'activation must be one of {ACTIVATIONS}, got {self.activation!r}')

    @classmethod
    def uniform(cls, inputs: int, width: int, depth: int, classes: int, activation: str = 'relu'):
        return cls((inputs,) + (width,) * (depth - 1) + (classes,), activation)

    @property
    def depth(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def hidden_dims(self) -> Tuple[int, ...]:
        return self.layer_dims[1:-1]

    @property
    def max_hidden(self) -> int:
        return max(self.hidden_dims, default=0)

    def shape(self, layer: int) -> Tuple[int, int]:
        # layer counts from 1, shape is (d_i, d_{i-1})
        return self.layer_dims[layer], self.layer_dims[layer - 1]


def activate(a: Mat, activation: str) -> Mat:
    if activation == 'relu':
        return np.maximum(a, 0.0)
    if activation == 'tanh':
        return np.tanh(a)
    return a.copy()


def activation_derivative(a: Mat, activation: str) -> Mat:
    # ReLU subgradient at exactly 0 is 0.
    if activation == 'relu':
        return (a > 0).astype(np.float64)
    if activation == 'tanh':
        t = np.tanh(a)
        return 1.0 - t * t
    return np.ones_like(a)


@dataclass(frozen=True)
class Mlp:
    topology: Topology
    weights: Tuple[Mat, ...]

    def __post_init__(self):
        if len(self.weights) != self.topology.depth:
            raise ContractViolation(f'expected {self.topology.depth} weight matrices, got {len(self.weights)}')
        frozen = []
        for layer, w in enumerate(self.weights, start=1):
            w = np.array(as_mat(w, f'W_{layer}'))
            if w.shape != self.topology.shape(layer):
                raise ShapeMismatchError(f'W_{layer}', w.shape, self.topology.shape(layer))
            w.setflags(write=False)
            frozen.append(w)
        object.__setattr__(self, 'weights', tuple(frozen))

    @property
    def depth(self) -> int:
        return self.topology.depth

    def with_weights(self, weights: Sequence[Mat]) -> 'Mlp':
        return Mlp(self.topology, tuple(weights))


@dataclass
class ForwardTrace:
    # a_1 .. a_N
    pre_activations: List[Mat] = field(default_factory=list)
    # h_0 .. h_{N-1}
    activations: List[Mat] = field(default_factory=list)

    @property
    def logits(self) -> Mat:
        return self.pre_activations[-1]

    @property
    def batch_size(self) -> int:
        return self.activations[0].shape[1]


def xavier_init(topology: Topology, rng: Rng) -> Mlp:
    weights = []
    for layer in range(1, topology.depth + 1):
        fan_out, fan_in = topology.shape(layer)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
    return Mlp(topology, tuple(weights))


def forward(mlp: Mlp, x, backend, activation_quantizer: Optional[Quantizer] = None,
            rng: Optional[Rng] = None, record: bool = True) -> ForwardTrace:
    """Run the batch x (features x batch) through mlp on backend.

    The activation quantizer, when given, snaps the hidden activations h_i
    that feed the next layer. Pre-activations are kept unquantized.
    """
    h = as_mat(x, 'input')
    if h.shape[0] != mlp.topology.inputs:
        raise ShapeMismatchError('forward', h.shape, (mlp.topology.inputs, h.shape[1]))

    trace = ForwardTrace(activations=[h])
    for layer, w in enumerate(mlp.weights, start=1):
        a = backend.matvec(layer, w, h, record=record)
        trace.pre_activations.append(a)
        if layer < mlp.depth:
            h = activate(a, mlp.topology.activation)
            if activation_quantizer is not None:
                h = quantize(h, activation_quantizer, rng)
            trace.activations.append(h)
    return trace


def predict(trace: ForwardTrace) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(trace.logits, axis=0)


def softmax(logits: Mat) -> Mat:
    shifted = logits - np.max(logits, axis=0, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=0, keepdims=True)


def cross_entropy(logits: Mat, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    peak = np.max(logits, axis=0)
    log_norm = peak + np.log(np.sum(np.exp(logits - peak), axis=0))
    picked = logits[labels, np.arange(logits.shape[1])]
    return float(np.mean(log_norm - picked))


def one_hot(labels, classes: int) -> Mat:
    labels = np.asarray(labels, dtype=np.int64)
    targets = np.zeros((classes, labels.size))
    targets[labels, np.arange(labels.size)] = 1.0
    return targets
