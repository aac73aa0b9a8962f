"""Model checkpoints.

Layout: the magic b'CIMTRAIN1', a little-endian uint32 header length, a
UTF-8 JSON header, then every array as raw little-endian float64 in header
order.
"""
import json
import struct

import numpy as np

from src.domain.errors import CheckpointError
from src.domain.network import Mlp, Topology
from src.domain.trainers import FeedbackBank

MAGIC = b'CIMTRAIN1'
FORMAT_VERSION = 1


def save_checkpoint(path, mlp: Mlp, bank: FeedbackBank):
    arrays = [(f'W_{layer}', w) for layer, w in enumerate(mlp.weights, start=1)]
    arrays.append(('feedback_master', bank.master))
    header = {
        'format_version': FORMAT_VERSION,
        'layer_dims': list(mlp.topology.layer_dims),
        'activation': mlp.topology.activation,
        'arrays': [{'name': name, 'shape': list(a.shape)} for name, a in arrays],
    }
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', len(encoded)))
        f.write(encoded)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype='<f8').tobytes())


def load_checkpoint(path):
    with open(path, 'rb') as f:
        buffer = f.read()
    if not buffer.startswith(MAGIC):
        raise CheckpointError(f'{path}: not a checkpoint (bad magic)')
    offset = len(MAGIC)
    if len(buffer) < offset + 4:
        raise CheckpointError(f'{path}: truncated header')
    (length,) = struct.unpack('<I', buffer[offset:offset + 4])
    offset += 4
    try:
        header = json.loads(buffer[offset:offset + length].decode('utf-8'))
    except ValueError as e:
        raise CheckpointError(f'{path}: unreadable header: {e}')
    if header.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f'{path}: unsupported format version {header.get("format_version")}')
    offset += length

    arrays = {}
    for entry in header['arrays']:
        shape = tuple(entry['shape'])
        size = int(np.prod(shape)) * 8
        if len(buffer) < offset + size:
            raise CheckpointError(f'{path}: truncated array {entry["name"]}')
        if size == 0:
            arrays[entry['name']] = np.zeros(shape)
            continue
        arrays[entry['name']] = np.frombuffer(buffer, dtype='<f8', count=size // 8, offset=offset) \
            .reshape(shape).astype(np.float64)
        offset += size

    topology = Topology(tuple(header['layer_dims']), header['activation'])
    mlp = Mlp(topology, tuple(arrays[f'W_{layer}'] for layer in range(1, topology.depth + 1)))
    return mlp, FeedbackBank(arrays['feedback_master'])
