"""WGF v1: little-endian gridded field.

    magic "WGF1" | u32 version | u8 var_id | u8 units | u16 reserved
    | u32 lat_count | u32 lon_count | f64 lat0 dlat lon0 dlon
    | i64 valid_time | lat_count * lon_count f64 values (row-major, NaN = land)
"""
import logging
import os
import struct

import numpy as np

from wavecast.errors import ContractError, FormatError
from wavecast.gridio import UNIT_CODES, UNIT_NAMES, GridField, GridGeometry, VarId

MAGIC = b'WGF1'
VERSION = 1
HEADER = struct.Struct('<4sIBBHII4dq')
VALUE_DTYPE = '<f8'


def encode_wgf(field: GridField) -> bytes:
    geo = field.geometry
    header = HEADER.pack(MAGIC, VERSION, int(field.var_id), UNIT_NAMES[field.units], 0,
                         geo.lat_count, geo.lon_count, geo.lat0, geo.dlat, geo.lon0,
                         geo.dlon, int(field.valid_time))
    return header + np.ascontiguousarray(field.values, dtype=VALUE_DTYPE).tobytes()


def decode_wgf(data: bytes) -> GridField:
    if len(data) < HEADER.size:
        raise FormatError(f'Truncated header: {len(data)} of {HEADER.size} bytes', len(data))
    (magic, version, var_id, units, _, lat_count, lon_count,
     lat0, dlat, lon0, dlon, valid_time) = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f'Bad magic {magic!r}, expected {MAGIC!r}', 0)
    if version != VERSION:
        raise FormatError(f'Unsupported WGF version {version}, expected {VERSION}', 4)
    if var_id not in VarId._value2member_map_:
        raise FormatError(f'Unknown variable id {var_id}', 8)
    if units not in UNIT_CODES:
        raise FormatError(f'Unknown units code {units}', 9)
    payload = len(data) - HEADER.size
    expected = lat_count * lon_count * 8
    if payload != expected:
        raise FormatError(f'Truncated payload: header declares {lat_count}x{lon_count} '
                          f'values ({expected} bytes), found {payload} bytes',
                          HEADER.size + min(payload, expected))
    try:
        geometry = GridGeometry(lat_count, lon_count, lat0, dlat, lon0, dlon)
    except ContractError as e:
        raise FormatError(f'Invalid grid geometry: {e}', 16) from None
    values = np.frombuffer(data, dtype=VALUE_DTYPE, offset=HEADER.size)
    values = values.astype(np.float64).reshape(lat_count, lon_count)
    return GridField(VarId(var_id), geometry, values, UNIT_CODES[units], valid_time)


class WgfFileHandler:
    def __init__(self, input_: str = None, output: str = None):
        self.input = input_
        self.output = output or input_

    def read(self) -> GridField:
        logging.debug(f'Reading file: {self.input}')
        try:
            with open(self.input, 'rb') as f:
                data = f.read()
        except OSError as e:
            raise FormatError(f'Failed to read {self.input}: {e}') from None
        try:
            return decode_wgf(data)
        except FormatError as e:
            e.args = (f'{self.input}: {e.args[0]}',)
            raise

    def write(self, field: GridField) -> None:
        logging.debug(f'Writing {field.var_id.name} field to file: {self.output}')
        if os.path.dirname(self.output):
            os.makedirs(os.path.dirname(self.output), exist_ok=True)
        with open(self.output, 'wb') as f:
            f.write(encode_wgf(field))


def read_wgf(path: str) -> GridField:
    return WgfFileHandler(input_=path).read()


def write_wgf(field: GridField, path: str) -> None:
    WgfFileHandler(output=path).write(field)
