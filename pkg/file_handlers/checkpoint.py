"""WCKP checkpoint, little-endian:

    magic "WCKP" | u32 version
    | parameter table | optimizer-moment table
    | u32 length | msgpack state block (config echo, NormStats, RNG, counters)

A table is u32 count followed by entries of
u16 name length | utf-8 name | u8 ndim | u32 extents | f64 values.
"""
import logging
import os
import struct
from typing import Dict, Tuple

import msgpack
import numpy as np

from wavecast.errors import FormatError

MAGIC = b'WCKP'
VERSION = 1
VALUE_DTYPE = '<f8'


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError(f'Truncated checkpoint: need {size} bytes', self.offset)
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def take_bytes(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(f'Truncated checkpoint: need {size} bytes', self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk


def _pack_table(table: Dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack('<I', len(table))]
    for name, value in table.items():
        encoded = name.encode('utf-8')
        value = np.ascontiguousarray(value, dtype=VALUE_DTYPE)
        parts.append(struct.pack('<H', len(encoded)) + encoded)
        parts.append(struct.pack(f'<B{value.ndim}I', value.ndim, *value.shape))
        parts.append(value.tobytes())
    return b''.join(parts)


def _unpack_table(cursor: _Cursor) -> Dict[str, np.ndarray]:
    table = dict()
    (count,) = cursor.take('<I')
    for _ in range(count):
        (name_len,) = cursor.take('<H')
        start = cursor.offset
        try:
            name = cursor.take_bytes(name_len).decode('utf-8')
        except UnicodeDecodeError:
            raise FormatError('Corrupt tensor name', start) from None
        (ndim,) = cursor.take('<B')
        shape = cursor.take(f'<{ndim}I')
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(cursor.take_bytes(size * 8), dtype=VALUE_DTYPE)
        table[name] = values.astype(np.float64).reshape(shape)
    return table


def encode_checkpoint(params: Dict[str, np.ndarray], moments: Dict[str, np.ndarray],
                      state: dict) -> bytes:
    state_block = msgpack.packb(state, use_bin_type=True)
    return b''.join([MAGIC, struct.pack('<I', VERSION), _pack_table(params),
                     _pack_table(moments), struct.pack('<I', len(state_block)), state_block])


def decode_checkpoint(data: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray], dict]:
    cursor = _Cursor(data)
    (magic,) = cursor.take('<4s')
    if magic != MAGIC:
        raise FormatError(f'Bad magic {magic!r}, expected {MAGIC!r}', 0)
    (version,) = cursor.take('<I')
    if version != VERSION:
        raise FormatError(f'Unsupported checkpoint version {version}, expected {VERSION}', 4)
    params = _unpack_table(cursor)
    moments = _unpack_table(cursor)
    (state_len,) = cursor.take('<I')
    start = cursor.offset
    try:
        state = msgpack.unpackb(cursor.take_bytes(state_len), raw=False, strict_map_key=False)
    except (ValueError, msgpack.UnpackException) as e:
        raise FormatError(f'Corrupt state block: {e}', start) from None
    if cursor.offset != len(data):
        raise FormatError(f'{len(data) - cursor.offset} trailing bytes after state block',
                          cursor.offset)
    return params, moments, state


class CheckpointFileHandler:
    def __init__(self, input_: str = None, output: str = None):
        self.input = input_
        self.output = output or input_

    def read(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray], dict]:
        logging.info(f'Reading file: {self.input}')
        try:
            with open(self.input, 'rb') as f:
                data = f.read()
        except OSError as e:
            raise FormatError(f'Failed to read checkpoint {self.input}: {e}') from None
        return decode_checkpoint(data)

    def write(self, params: Dict[str, np.ndarray], moments: Dict[str, np.ndarray],
              state: dict) -> None:
        logging.info(f'Writing {len(params)} tensors to file: {self.output}')
        if os.path.dirname(self.output):
            os.makedirs(os.path.dirname(self.output), exist_ok=True)
        with open(self.output, 'wb') as f:
            f.write(encode_checkpoint(params, moments, state))
