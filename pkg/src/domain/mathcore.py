"""Dense linear algebra, seeded randomness and fixed-point quantizers.

Matrices are plain 2-D float64 numpy arrays. Quantization is simulated:
values are snapped to the quantizer grid but stay float64.
"""
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.domain.errors import ContractViolation, QuantizerError, ShapeMismatchError

Mat = np.ndarray

QUANTIZER_MODES = ('nearest', 'stochastic')


def as_mat(x, name: str = 'matrix') -> Mat:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ContractViolation(f'{name} must be 2-D, got {m.ndim} dimensions')
    if not np.all(np.isfinite(m)):
        raise ContractViolation(f'{name} contains non-finite entries')
    return m


class Rng:
    """Counter-based Philox stream with explicit identity.

    Sub-streams are derived from spawn keys, so a stream depends only on the
    seed and the key path, never on how much of a sibling stream was used.
    """

    ALGORITHM = 'philox4x64'

    def __init__(self, seed: int, spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        sequence = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    @staticmethod
    def _key(key) -> int:
        if isinstance(key, str):
            return zlib.crc32(key.encode('utf-8'))
        return int(key) & 0xFFFFFFFF

    def derive(self, *keys) -> 'Rng':
        return Rng(self.seed, self.spawn_key + tuple(self._key(key) for key in keys))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape)

    def normal(self, loc: float, scale: float, shape) -> np.ndarray:
        return self.generator.normal(loc, scale, size=shape)

    def random(self, shape) -> np.ndarray:
        return self.generator.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def describe(self) -> dict:
        return {'algorithm': self.ALGORITHM, 'seed': self.seed, 'spawn_key': list(self.spawn_key)}


def derive(rng: Rng, *keys) -> Rng:
    return rng.derive(*keys)


@dataclass(frozen=True)
class Quantizer:
    bits: int
    range: float = 1.0
    mode: str = 'nearest'
    # Per-tensor range r = max|x| instead of the fixed range.
    dynamic: bool = False

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or isinstance(self.bits, bool) or self.bits < 1:
            raise QuantizerError(f'quantizer bits must be an integer >= 1, got {self.bits!r}')
        if not self.range > 0 or not np.isfinite(self.range):
            raise QuantizerError(f'quantizer range must be positive, got {self.range!r}')
        if self.mode not in QUANTIZER_MODES:
            raise QuantizerError(f'quantizer mode must be one of {QUANTIZER_MODES}, got {self.mode!r}')

    @property
    def max_code(self) -> int:
        return 1 if self.bits == 1 else 2 ** (self.bits - 1) - 1

    def step(self, r: float = None) -> float:
        r = self.range if r is None else r
        if self.bits == 1:
            return 2.0 * r
        return r / self.max_code

    def levels(self, r: float = None) -> np.ndarray:
        r = self.range if r is None else r
        if self.bits == 1:
            return np.array([-r, r])
        return np.arange(-self.max_code, self.max_code + 1) * self.step(r)


def quantize(x, q: Quantizer, rng: Optional[Rng] = None) -> Mat:
    """Snap every entry of x onto the grid of q.

    bits == 1 uses {-r, +r}. bits >= 2 uses k * step with
    |k| <= 2^(bits-1) - 1, so zero and both bounds are levels.
    Nearest mode breaks ties toward the even code.
    """
    if q.mode == 'stochastic' and rng is None:
        raise QuantizerError('stochastic quantization requires an rng')

    x = np.asarray(x, dtype=np.float64)
    r = q.range
    if q.dynamic:
        r = float(np.max(np.abs(x))) if x.size else 0.0
        if r == 0.0:
            return np.zeros_like(x)

    clipped = np.clip(x, -r, r)
    step = q.step(r)
    if q.bits == 1:
        origin, low, high = -r, 0, 1
    else:
        origin, low, high = 0.0, -q.max_code, q.max_code

    position = (clipped - origin) / step
    if q.mode == 'nearest':
        codes = np.rint(position)
    else:
        floor = np.floor(position)
        codes = floor + (rng.random(position.shape) < (position - floor))
    codes = np.clip(codes, low, high)
    return origin + codes * step


def matmul(a, b, ordered: bool = True) -> Mat:
    """Matrix product.

    The ordered path sums over k in ascending order, one rounding per
    multiply and per add, vectorized over the output entries. ordered=False
    hands the product to BLAS and gives up the fixed order.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError('matmul', a.shape, b.shape)

    if not ordered:
        return a @ b

    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out = out + a[:, k:k + 1] * b[k:k + 1, :]
    return out


def hadamard(a, b) -> Mat:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError('hadamard', a.shape, b.shape)
    return a * b


def outer(u, v) -> Mat:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    return u[:, None] * v[None, :]
