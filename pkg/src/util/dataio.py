"""Dataset ingestion: IDX files, synthetic blobs and batching."""
import gzip
import os
import struct
from dataclasses import dataclass
from math import isqrt
from typing import Iterator, Optional, Tuple

import numpy as np

from src.domain.errors import BadMagicError, ContractViolation, CountMismatchError, TruncatedFileError
from src.domain.mathcore import Rng
from src.util import logwrapper

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATA_ROOT_ENV = 'CIMTRAIN_DATA_ROOT'


@dataclass(frozen=True)
class Dataset:
    # features x samples, values in [0, 1]
    images: np.ndarray
    labels: np.ndarray
    split: str
    classes: int

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != self.labels.size:
            raise ContractViolation(f'{self.images.shape[1] if self.images.ndim == 2 else "?"} image columns '
                                    f'but {self.labels.size} labels')

    @property
    def samples(self) -> int:
        return self.labels.size

    @property
    def features(self) -> int:
        return self.images.shape[0]

    def take(self, limit: Optional[int]) -> 'Dataset':
        if limit is None or limit >= self.samples:
            return self
        return Dataset(self.images[:, :limit], self.labels[:limit], self.split, self.classes)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 10
    features: int = 64
    samples_per_class: int = 50
    std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.classes, self.features, self.samples_per_class) < 1 or self.std < 0:
            raise ContractViolation('synthetic spec needs positive sizes and std >= 0')
        if self.features < self.classes:
            raise ContractViolation('synthetic spec needs at least as many features as classes')


@dataclass(frozen=True)
class DatasetInfo:
    name: str
    features: int
    classes: int
    train_samples: int
    test_samples: int


DATASETS = {
    'mnist': DatasetInfo('mnist', 784, 10, 60000, 10000),
    'fashion-mnist': DatasetInfo('fashion-mnist', 784, 10, 60000, 10000),
}

IDX_FILES = {
    'train': ('train-images-idx3-ubyte', 'train-labels-idx1-ubyte'),
    'test': ('t10k-images-idx3-ubyte', 't10k-labels-idx1-ubyte'),
}


def _read_bytes(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith('.gz') else open
    with opener(path, 'rb') as f:
        return f.read()


def _header(buffer: bytes, path, magic: int, dims: int) -> Tuple[int, ...]:
    needed = 4 + 4 * dims
    if len(buffer) < needed:
        raise TruncatedFileError(path, needed, len(buffer))
    found = struct.unpack('>I', buffer[:4])[0]
    if found != magic:
        raise BadMagicError(path, magic, found)
    return struct.unpack('>' + 'I' * dims, buffer[4:needed])


def load_idx(path_images, path_labels, split: str = 'train', classes: int = 10) -> Dataset:
    images_buffer = _read_bytes(path_images)
    count, rows, cols = _header(images_buffer, path_images, IMAGES_MAGIC, 3)
    pixels = count * rows * cols
    if len(images_buffer) < 16 + pixels:
        raise TruncatedFileError(path_images, 16 + pixels, len(images_buffer))

    labels_buffer = _read_bytes(path_labels)
    (label_count,) = _header(labels_buffer, path_labels, LABELS_MAGIC, 1)
    if len(labels_buffer) < 8 + label_count:
        raise TruncatedFileError(path_labels, 8 + label_count, len(labels_buffer))
    if label_count != count:
        raise CountMismatchError(path_labels, count, label_count)

    raw = np.frombuffer(images_buffer, dtype=np.uint8, count=pixels, offset=16)
    images = raw.reshape(count, rows * cols).T.astype(np.float64) / 255.0
    labels = np.frombuffer(labels_buffer, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if labels.size and int(labels.max()) >= classes:
        raise ContractViolation(f'{path_labels}: label {int(labels.max())} outside [0, {classes})')
    return Dataset(images, labels, split, classes)


def write_idx(path_images, path_labels, dataset: Dataset, image_shape: Tuple[int, int] = None):
    if image_shape is None:
        side = isqrt(dataset.features)
        image_shape = (side, side) if side * side == dataset.features else (1, dataset.features)
    pixels = np.clip(np.rint(dataset.images.T * 255.0), 0, 255).astype(np.uint8)

    images_buffer = struct.pack('>IIII', IMAGES_MAGIC, dataset.samples, *image_shape) + pixels.tobytes()
    labels_buffer = struct.pack('>II', LABELS_MAGIC, dataset.samples) + dataset.labels.astype(np.uint8).tobytes()
    for path, buffer in ((path_images, images_buffer), (path_labels, labels_buffer)):
        opener = gzip.open if str(path).endswith('.gz') else open
        with opener(str(path), 'wb') as f:
            f.write(buffer)


def default_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, './data')


def _locate(directory: str, stem: str) -> str:
    for candidate in (stem, stem + '.gz'):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    return os.path.join(directory, stem)


def dataset_files(name: str, split: str, root: str = None) -> Tuple[str, str]:
    """Resolved (images, labels) paths of a split, plain or gzipped."""
    directory = os.path.join(root or default_root(), name)
    images_stem, labels_stem = IDX_FILES[split]
    return _locate(directory, images_stem), _locate(directory, labels_stem)


def load_dataset(name: str, split: str, root: str = None, limit: int = None) -> Dataset:
    """Load an MNIST-family split from <root>/<name>/."""
    info = DATASETS[name]
    path_images, path_labels = dataset_files(name, split, root)
    logwrapper.info('Loading dataset.', name=name, split=split, images=path_images)
    dataset = load_idx(path_images, path_labels, split, info.classes)
    return dataset.take(limit)


def synthetic(spec: SyntheticSpec, split: str = 'train') -> Dataset:
    """Gaussian blobs around one-hot vertices on seeded random features.

    Both splits share the class centers; the noise stream depends on split.
    """
    root = Rng(spec.seed)
    vertices = root.derive('centers').permutation(spec.features)[:spec.classes]
    centers = np.zeros((spec.features, spec.classes))
    centers[vertices, np.arange(spec.classes)] = 1.0

    labels = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    images = centers[:, labels]
    if spec.std > 0:
        images = images + root.derive('noise', split).normal(0.0, spec.std, images.shape)
    return Dataset(np.clip(images, 0.0, 1.0), labels.astype(np.int64), split, spec.classes)


def batches(dataset: Dataset, batch_size: int, rng: Rng = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches. A test split is never shuffled."""
    if batch_size < 1:
        raise ContractViolation(f'batch_size must be >= 1, got {batch_size}')
    if rng is not None and dataset.split != 'test':
        order = rng.permutation(dataset.samples)
    else:
        order = np.arange(dataset.samples)
    for start in range(0, dataset.samples, batch_size):
        index = order[start:start + batch_size]
        yield dataset.images[:, index], dataset.labels[index]
