"""Binary checkpoint container for a ModelBundle.

Layout (all integers little-endian):

    b"SPRL"                 magic
    uint32                  format version (1)
    uint32 + bytes          JSON header: encoder config, vocab, task schemas, optimizer step counters
    uint32                  entry count
    per entry:
        uint16 + bytes      UTF-8 name, e.g. "shared/embed", "head/NER/span/out/w", "shared/embed#m"
        uint8               ndim
        uint32 * ndim       dims
        float64 * prod(dims) raw little-endian data

Adam moments are stored as separate entries suffixed "#m" and "#v".
"""
import json
import struct
from pathlib import Path

import numpy as np

from errors import CheckpointError
from helpers import log
from schema import TaskSchema
from utils.encoder import EncoderConfig
from utils.numerics import Parameters
from utils.spanrel import ModelBundle

MAGIC = b'SPRL'
VERSION = 1


def _entries(store, prefix):
    for name, value in store.values.items():
        yield f"{prefix}/{name}", value
        yield f"{prefix}/{name}#m", store.m[name]
        yield f"{prefix}/{name}#v", store.v[name]


def _pack_entry(name, array):
    raw_name = name.encode('utf-8')
    parts = [struct.pack('<H', len(raw_name)), raw_name, struct.pack('<B', array.ndim)]
    parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
    parts.append(np.ascontiguousarray(array, dtype='<f8').tobytes())
    return b''.join(parts)


def save_bundle(bundle, path, extra=None):
    """Write every parameter and its optimizer state; returns the path."""
    header = {
        'encoder': bundle.config.to_dict(),
        'schemas': {task: schema.to_dict() for task, schema in bundle.schemas.items()},
        'steps': {'shared': bundle.shared.t, **{f"head/{task}": store.t for task, store in bundle.heads.items()}},
        'extra': extra or {},
    }
    entries = list(_entries(bundle.shared, 'shared'))
    for task, store in bundle.heads.items():
        entries.extend(_entries(store, f"head/{task}"))

    raw_header = json.dumps(header, sort_keys=True).encode('utf-8')
    blob = [MAGIC, struct.pack('<I', VERSION), struct.pack('<I', len(raw_header)), raw_header,
            struct.pack('<I', len(entries))]
    blob.extend(_pack_entry(name, value) for name, value in entries)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_bytes(b''.join(blob))
    except OSError as e:
        raise CheckpointError(f"cannot write {path}: {e}") from None
    log('OK', f"Saved checkpoint {path.name} ({len(entries)} entries)")
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """(header dict, {entry name: array}) without building a bundle."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a spanrel checkpoint")
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = reader.unpack('<I')
    try:
        header = json.loads(reader.take(header_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError('corrupt checkpoint header') from None
    (count,) = reader.unpack('<I')
    arrays = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype='<f8').reshape(dims).astype(np.float64)
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last entry")
    return header, arrays


def _store(arrays, prefix, step):
    store = Parameters()
    marker = prefix + '/'
    for name, value in arrays.items():
        if not name.startswith(marker) or '#' in name:
            continue
        key = name[len(marker):]
        store.values[key] = value.copy()
        store.m[key] = arrays.get(f"{name}#m", np.zeros_like(value)).copy()
        store.v[key] = arrays.get(f"{name}#v", np.zeros_like(value)).copy()
    store.t = step
    return store


def load_bundle(path):
    header, arrays = read_checkpoint(path)
    config = EncoderConfig(**header['encoder'])
    schemas = {task: TaskSchema.from_dict(data) for task, data in header['schemas'].items()}
    steps = header.get('steps', {})
    shared = _store(arrays, 'shared', steps.get('shared', 0))
    heads = {task: _store(arrays, f"head/{task}", steps.get(f"head/{task}", 0)) for task in schemas}
    if 'embed' not in shared:
        raise CheckpointError(f"{path} has no encoder parameters")
    return ModelBundle(config, schemas, shared=shared, heads=heads)
