"""Gridded-field data model: geometry, masked fields, wave states,
direction encoding and z-score normalization."""
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Sequence, Tuple

import numpy as np

from wavecast.errors import ContractError, DomainError, GridMismatchError, StatsError

PERIODIC_TOL = 1e-9
DIRECTION_MIN_MAGNITUDE = 1e-6
STATIC_TIME = -1
EARTH_RADIUS_KM = 6371.0


class VarId(IntEnum):
    GENERIC = 0
    SWH = 1
    MWP = 2
    MWD = 3
    U10 = 4
    V10 = 5
    DEPTH = 6


UNIT_CODES = {0: '1', 1: 'm', 2: 's', 3: 'deg', 4: 'm/s'}
UNIT_NAMES = {name: code for code, name in UNIT_CODES.items()}
DEFAULT_UNITS = {
    VarId.GENERIC: '1',
    VarId.SWH: 'm',
    VarId.MWP: 's',
    VarId.MWD: 'deg',
    VarId.U10: 'm/s',
    VarId.V10: 'm/s',
    VarId.DEPTH: 'm',
}
# Variables that are z-scored; direction channels are already bounded.
NORMALIZED_VARS = ('SWH', 'MWP', 'U10', 'V10')
WAVE_CHANNELS = ('SWH', 'MWP', 'MWD_SIN', 'MWD_COS')
WIND_CHANNELS = ('U10', 'V10')


@dataclass(frozen=True)
class GridGeometry:
    lat_count: int
    lon_count: int
    lat0: float
    dlat: float
    lon0: float
    dlon: float

    def __post_init__(self):
        if self.lat_count < 1 or self.lon_count < 1:
            raise ContractError(f'Grid extents must be positive: {self}')
        if abs(self.lon_count * self.dlon - 360.0) > PERIODIC_TOL:
            raise ContractError(f'Grid is not periodic in longitude: '
                                f'{self.lon_count} x {self.dlon} != 360')

    @property
    def shape(self) -> Tuple[int, int]:
        return self.lat_count, self.lon_count

    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.lat_count)

    def lons(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.lon_count)

    def cos_lat_weights(self) -> np.ndarray:
        """Per-cell area weights, shape (lat_count, lon_count)."""
        w = np.clip(np.cos(np.deg2rad(self.lats())), 0.0, None)
        return np.repeat(w[:, None], self.lon_count, axis=1)

    def check_same(self, other: 'GridGeometry') -> None:
        if self != other:
            raise GridMismatchError(self, other)

    def __str__(self) -> str:
        return (f'{self.lat_count}x{self.lon_count} lat0={self.lat0:g} dlat={self.dlat:g} '
                f'lon0={self.lon0:g} dlon={self.dlon:g}')


def global_grid(lat_count: int, lon_count: int) -> GridGeometry:
    """Cell-centred global grid, rows ordered south to north."""
    dlat = 180.0 / lat_count
    return GridGeometry(lat_count, lon_count, -90.0 + dlat / 2.0, dlat, 0.0, 360.0 / lon_count)


@dataclass(frozen=True)
class GridField:
    var_id: VarId
    geometry: GridGeometry
    values: np.ndarray
    units: str = ''
    valid_time: int = STATIC_TIME

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.geometry.shape:
            raise ContractError(f'Field values {values.shape} do not match grid {self.geometry}')
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'var_id', VarId(self.var_id))
        if not self.units:
            object.__setattr__(self, 'units', DEFAULT_UNITS[self.var_id])
        if self.units not in UNIT_NAMES:
            raise ContractError(f'Unknown units: {self.units}')

    def with_values(self, values: np.ndarray, var_id: VarId = None, units: str = None) -> 'GridField':
        var_id = self.var_id if var_id is None else var_id
        return GridField(var_id, self.geometry, values,
                         units or DEFAULT_UNITS[VarId(var_id)], self.valid_time)


@dataclass(frozen=True)
class LandMask:
    ocean: np.ndarray

    def __post_init__(self):
        ocean = np.asarray(self.ocean, dtype=bool)
        object.__setattr__(self, 'ocean', ocean)
        if not ocean.any():
            raise DomainError('Land mask has no ocean cells')

    @property
    def ocean_count(self) -> int:
        return int(self.ocean.sum())

    @property
    def land(self) -> np.ndarray:
        return ~self.ocean


def derive_mask(depth: GridField) -> LandMask:
    """Ocean where elevation < 0; exactly 0 counts as land."""
    if depth.var_id != VarId.DEPTH:
        raise ContractError(f'derive_mask needs a DEPTH field, got {depth.var_id.name}')
    with np.errstate(invalid='ignore'):
        ocean = depth.values < 0.0
    if not ocean.any():
        raise DomainError('Depth field contains no ocean cells (all land)')
    return LandMask(ocean)


def encode_direction_array(degrees: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rad = np.deg2rad(degrees)
    return np.sin(rad), np.cos(rad)


def decode_direction_array(sin: np.ndarray, cos: np.ndarray) -> np.ndarray:
    """Degrees clockwise from north in [0, 360); NaN where the (sin, cos)
    magnitude is below DIRECTION_MIN_MAGNITUDE."""
    magnitude = np.hypot(sin, cos)
    with np.errstate(invalid='ignore', divide='ignore'):
        degrees = np.rad2deg(np.arctan2(sin / magnitude, cos / magnitude)) % 360.0
        degrees = np.where(degrees >= 360.0, degrees - 360.0, degrees)
        return np.where(magnitude < DIRECTION_MIN_MAGNITUDE, np.nan, degrees)


def encode_direction(mwd: GridField) -> Tuple[GridField, GridField]:
    sin, cos = encode_direction_array(mwd.values)
    return (mwd.with_values(sin, VarId.GENERIC, '1'),
            mwd.with_values(cos, VarId.GENERIC, '1'))


def decode_direction(sin: GridField, cos: GridField) -> GridField:
    sin.geometry.check_same(cos.geometry)
    return sin.with_values(decode_direction_array(sin.values, cos.values), VarId.MWD, 'deg')


@dataclass(frozen=True)
class WaveState:
    swh: GridField
    mwp: GridField
    mwd_sin: GridField
    mwd_cos: GridField

    @classmethod
    def from_arrays(cls, geometry: GridGeometry, swh: np.ndarray, mwp: np.ndarray,
                    mwd_deg: np.ndarray = None, sin: np.ndarray = None,
                    cos: np.ndarray = None, valid_time: int = STATIC_TIME) -> 'WaveState':
        if mwd_deg is not None:
            sin, cos = encode_direction_array(mwd_deg)
        return cls(GridField(VarId.SWH, geometry, swh, 'm', valid_time),
                   GridField(VarId.MWP, geometry, mwp, 's', valid_time),
                   GridField(VarId.GENERIC, geometry, sin, '1', valid_time),
                   GridField(VarId.GENERIC, geometry, cos, '1', valid_time))

    @classmethod
    def from_stack(cls, geometry: GridGeometry, stack: np.ndarray,
                   valid_time: int = STATIC_TIME) -> 'WaveState':
        return cls.from_arrays(geometry, stack[0], stack[1], sin=stack[2], cos=stack[3],
                               valid_time=valid_time)

    @property
    def geometry(self) -> GridGeometry:
        return self.swh.geometry

    @property
    def valid_time(self) -> int:
        return self.swh.valid_time

    def stack(self) -> np.ndarray:
        """Physical [4, H, W] stack: swh, mwp, sin, cos."""
        return np.stack([self.swh.values, self.mwp.values,
                         self.mwd_sin.values, self.mwd_cos.values])

    def mwd(self) -> GridField:
        return decode_direction(self.mwd_sin, self.mwd_cos)

    def fields(self) -> Dict[str, GridField]:
        return dict(zip(WAVE_CHANNELS, (self.swh, self.mwp, self.mwd_sin, self.mwd_cos)))


@dataclass
class NormStats:
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for var in NORMALIZED_VARS:
            if var not in self.std or not self.std[var] > 0.0:
                raise StatsError(f'Standard deviation of {var} must be > 0, '
                                 f'got {self.std.get(var)}')

    def as_dict(self) -> dict:
        return {'mean': dict(self.mean), 'std': dict(self.std)}

    @classmethod
    def from_dict(cls, data: dict) -> 'NormStats':
        return cls(dict(data['mean']), dict(data['std']))


def compute_norm_stats(stacks: Dict[str, np.ndarray], mask: LandMask) -> NormStats:
    """Mean/std over ocean cells of every [T, H, W] stack in ``stacks``."""
    means, stds = dict(), dict()
    for var in NORMALIZED_VARS:
        values = np.asarray(stacks[var])[:, mask.ocean]
        means[var] = float(np.mean(values))
        stds[var] = float(np.std(values))
    return NormStats(means, stds)


def _zscore(values: np.ndarray, stats: NormStats, var: str) -> np.ndarray:
    return (values - stats.mean[var]) / stats.std[var]


def normalize_stack(stack: np.ndarray, stats: NormStats, mask: LandMask,
                    channels: Sequence[str]) -> np.ndarray:
    """Z-score the normalized channels of a physical [C, H, W] stack and
    fill land cells with 0."""
    out = np.empty(stack.shape, dtype=np.float64)
    for c, name in enumerate(channels):
        out[c] = _zscore(stack[c], stats, name) if name in NORMALIZED_VARS else stack[c]
    out[:, mask.land] = 0.0
    return out


def denormalize_stack(stack: np.ndarray, stats: NormStats, mask: LandMask,
                      channels: Sequence[str]) -> np.ndarray:
    out = np.empty(stack.shape, dtype=np.float64)
    for c, name in enumerate(channels):
        if name in NORMALIZED_VARS:
            out[c] = stack[c] * stats.std[name] + stats.mean[name]
        else:
            out[c] = stack[c]
    out[:, mask.land] = np.nan
    return out


def normalize(state, stats: NormStats, mask: LandMask) -> np.ndarray:
    """WaveState -> [4, H, W]; (u10, v10) GridField pair -> [2, H, W]."""
    if isinstance(state, WaveState):
        return normalize_stack(state.stack(), stats, mask, WAVE_CHANNELS)
    u10, v10 = state
    return normalize_stack(np.stack([u10.values, v10.values]), stats, mask, WIND_CHANNELS)


def denormalize(stack: np.ndarray, stats: NormStats, mask: LandMask,
                geometry: GridGeometry, valid_time: int = STATIC_TIME):
    """Inverse of normalize; land cells come back as NaN."""
    if stack.shape[0] == len(WAVE_CHANNELS):
        return WaveState.from_stack(geometry, denormalize_stack(stack, stats, mask, WAVE_CHANNELS),
                                    valid_time)
    if stack.shape[0] == len(WIND_CHANNELS):
        phys = denormalize_stack(stack, stats, mask, WIND_CHANNELS)
        return (GridField(VarId.U10, geometry, phys[0], 'm/s', valid_time),
                GridField(VarId.V10, geometry, phys[1], 'm/s', valid_time))
    raise ContractError(f'Cannot denormalize a {stack.shape[0]}-channel stack')


def renormalize_direction(sin: np.ndarray, cos: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Project (sin, cos) onto the unit circle where the magnitude allows it."""
    magnitude = np.hypot(sin, cos)
    safe = magnitude >= DIRECTION_MIN_MAGNITUDE
    with np.errstate(invalid='ignore', divide='ignore'):
        return (np.where(safe, sin / magnitude, sin), np.where(safe, cos / magnitude, cos))


def wind_direction(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Direction the wind blows toward, degrees clockwise from north."""
    return np.rad2deg(np.arctan2(u, v)) % 360.0


def cell_size_km(geometry: GridGeometry) -> Tuple[float, float]:
    """(meridional, zonal) cell size in km, zonal measured at the equator."""
    km_per_deg = math.pi * EARTH_RADIUS_KM / 180.0
    return geometry.dlat * km_per_deg, geometry.dlon * km_per_deg
