"""Deterministic synthetic wind-wave world.

Wind is a zonal background flow plus translating Gaussian vortices. Waves
relax toward the fully developed sea of the local wind (SWH = alpha * s^2),
are advected along the wind, and take period and direction straight from
the wind. The dynamics are a toy with closed-form checkpoints, not a wave
model.
"""
import logging
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from file_handlers.manifest import ManifestFileHandler, ManifestRecord, format_time, parse_time
from file_handlers.msgpack import MsgpackFileHandler
from file_handlers.wgf import read_wgf, write_wgf
from wavecast.errors import ConfigError, DomainError
from wavecast.gridio import (GridField, GridGeometry, NormStats, VarId, WaveState,
                             cell_size_km, global_grid, wind_direction)
from wavecast.tensor import make_rng

MIN_PERIOD = 0.5
STORM_LAT_BAND = (0.15, 0.85)
OCEAN_ELEVATION = (-200.0, -4200.0)
LAND_ELEVATION = (10.0, 1010.0)

META_FILE = 'dataset.msgpack.bz2'
FIELDS_DIR = 'fields'
CLIMATOLOGY_DIR = 'climatology'
DEPTH_FILE = os.path.join(FIELDS_DIR, 'depth.wgf')
SPLITS = ('train', 'val', 'test')
ALL_MANIFEST = 'all.manifest'
WIND_MANIFEST = 'wind.manifest'
FIELD_VARS = ('SWH', 'MWP', 'MWD', 'U10', 'V10')
DATASET_FORMAT = 1


def split_manifest_name(split: str) -> str:
    return f'{split}.manifest'


@dataclass(frozen=True)
class SynthConfig:
    lat_count: int = 32
    lon_count: int = 64
    n_steps: int = 1900
    dt_hours: float = 24.0
    seed: int = 7
    alpha: float = 0.025
    relax_rate: float = 0.3
    period_coeff: float = 0.55
    n_storms: int = 3
    land_fraction: float = 0.25
    storm_peak: float = 20.0
    storm_radius: float = 4.0
    background_wind: float = 8.0
    advect_fraction: float = 0.3
    t_in: int = 2
    leads: int = 7
    start_time: str = '2011-01-01T00:00:00Z'

    def __post_init__(self):
        if self.lat_count < 2 or self.lon_count < 2:
            raise ConfigError(f'Grid too small: {self.lat_count}x{self.lon_count}')
        if not 0.0 < self.relax_rate <= 1.0:
            raise ConfigError(f'relax_rate must be in (0, 1], got {self.relax_rate}')
        if not 0.0 <= self.land_fraction < 1.0:
            raise ConfigError(f'land_fraction must be in [0, 1), got {self.land_fraction}')
        if self.alpha < 0.0 or self.period_coeff < 0.0 or self.advect_fraction < 0.0:
            raise ConfigError('alpha, period_coeff and advect_fraction must be >= 0')
        if self.n_storms < 0 or self.storm_radius <= 0.0 or self.dt_hours <= 0.0:
            raise ConfigError('n_storms must be >= 0, storm_radius and dt_hours > 0')
        if self.t_in < 1 or self.leads < 1:
            raise ConfigError('t_in and leads must be >= 1')
        parse_time(self.start_time)

    @classmethod
    def from_run_config(cls, config) -> 'SynthConfig':
        return cls(**{f.name: config.get(f.name) for f in fields(cls)})

    @property
    def geometry(self) -> GridGeometry:
        return global_grid(self.lat_count, self.lon_count)

    @property
    def dt_seconds(self) -> int:
        return int(round(self.dt_hours * 3600.0))

    def valid_time(self, step: int) -> int:
        return parse_time(self.start_time) + step * self.dt_seconds

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Storm:
    """Vortex track in grid-cell coordinates (row south->north, col east)."""
    row0: float
    col0: float
    vrow: float
    vcol: float
    peak: float
    radius: float

    def center(self, step: int, geometry: GridGeometry) -> Tuple[float, float]:
        lo = STORM_LAT_BAND[0] * (geometry.lat_count - 1)
        hi = STORM_LAT_BAND[1] * (geometry.lat_count - 1)
        span = hi - lo
        row = self.row0 + self.vrow * step
        if span > 0.0:
            x = (row - lo) % (2.0 * span)
            row = lo + span - abs(x - span)
        col = (self.col0 + self.vcol * step) % geometry.lon_count
        return row, col


@dataclass(frozen=True)
class WorldState:
    u10: GridField
    v10: GridField
    wave: WaveState
    depth: GridField
    step: int
    config: SynthConfig
    storms: Tuple[Storm, ...] = ()

    @property
    def ocean(self) -> np.ndarray:
        return self.depth.values < 0.0


def background_wind(config: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Easterlies in the tropics, westerlies in mid-latitudes."""
    geometry = config.geometry
    phi = np.deg2rad(geometry.lats())
    u = -config.background_wind * np.cos(3.0 * phi)
    u = np.repeat(u[:, None], geometry.lon_count, axis=1)
    return u, np.zeros_like(u)


def storm_wind(storm: Storm, step: int, geometry: GridGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian-magnitude vortex. At the centre the wind points along the
    track with exactly ``storm.peak``; away from it the direction turns
    cyclonic (counter-clockwise north of the equator)."""
    row_c, col_c = storm.center(step, geometry)
    rows = np.arange(geometry.lat_count, dtype=np.float64)[:, None]
    cols = np.arange(geometry.lon_count, dtype=np.float64)[None, :]
    dy = np.broadcast_to(rows - row_c, geometry.shape)
    dx = (cols - col_c + geometry.lon_count / 2.0) % geometry.lon_count - geometry.lon_count / 2.0
    dx = np.broadcast_to(dx, geometry.shape)
    magnitude = storm.peak * np.exp(-(dx * dx + dy * dy) / (2.0 * storm.radius ** 2))
    speed = math.hypot(storm.vcol, storm.vrow)
    tx, ty = (storm.vcol / speed, storm.vrow / speed) if speed > 0.0 else (1.0, 0.0)
    lat_c = geometry.lat0 + geometry.dlat * row_c
    spin = 1.0 if lat_c >= 0.0 else -1.0
    dir_x = tx - spin * dy / storm.radius
    dir_y = ty + spin * dx / storm.radius
    norm = np.hypot(dir_x, dir_y)
    degenerate = norm < 1e-12
    dir_x = np.where(degenerate, tx, dir_x / np.where(degenerate, 1.0, norm))
    dir_y = np.where(degenerate, ty, dir_y / np.where(degenerate, 1.0, norm))
    return magnitude * dir_x, magnitude * dir_y


def wind_at(config: SynthConfig, storms: Tuple[Storm, ...], step: int) -> Tuple[GridField, GridField]:
    u, v = background_wind(config)
    for storm in storms:
        su, sv = storm_wind(storm, step, config.geometry)
        u = u + su
        v = v + sv
    time = config.valid_time(step)
    return (GridField(VarId.U10, config.geometry, u, 'm/s', time),
            GridField(VarId.V10, config.geometry, v, 'm/s', time))


def equilibrium_wave(config: SynthConfig, u: np.ndarray, v: np.ndarray,
                     ocean: np.ndarray, valid_time: int) -> WaveState:
    speed = np.hypot(u, v)
    swh = np.where(ocean, config.alpha * speed ** 2, np.nan)
    mwp = np.where(ocean, np.maximum(MIN_PERIOD, config.period_coeff * speed), np.nan)
    mwd = np.where(ocean, wind_direction(u, v), np.nan)
    return WaveState.from_arrays(config.geometry, swh, mwp, mwd_deg=mwd, valid_time=valid_time)


def make_depth(config: SynthConfig, rng: np.random.Generator) -> GridField:
    geometry = config.geometry
    noise = rng.standard_normal(geometry.shape)
    sigma = max(1.0, geometry.lon_count / 16.0)
    smooth = gaussian_filter(noise, sigma=sigma, mode=('nearest', 'wrap'))
    n_cells = geometry.lat_count * geometry.lon_count
    n_land = int(round(config.land_fraction * n_cells))
    if n_land >= n_cells:
        raise DomainError(f'land_fraction {config.land_fraction} leaves no ocean cell '
                          f'on a {geometry.lat_count}x{geometry.lon_count} grid')
    land = np.zeros(n_cells, dtype=bool)
    land[np.argsort(-smooth, axis=None, kind='stable')[:n_land]] = True
    land = land.reshape(geometry.shape)
    lo, hi = float(smooth.min()), float(smooth.max())
    scaled = (smooth - lo) / (hi - lo) if hi > lo else np.zeros_like(smooth)
    elevation = np.where(land,
                         LAND_ELEVATION[0] + (LAND_ELEVATION[1] - LAND_ELEVATION[0]) * scaled,
                         OCEAN_ELEVATION[0] + (OCEAN_ELEVATION[1] - OCEAN_ELEVATION[0]) * (1.0 - scaled))
    return GridField(VarId.DEPTH, geometry, elevation, 'm')


def make_storms(config: SynthConfig, rng: np.random.Generator) -> Tuple[Storm, ...]:
    lo = STORM_LAT_BAND[0] * (config.lat_count - 1)
    hi = STORM_LAT_BAND[1] * (config.lat_count - 1)
    storms = list()
    for _ in range(config.n_storms):
        vcol = rng.uniform(0.5, 1.5) * rng.choice((-1.0, 1.0))
        storms.append(Storm(row0=rng.uniform(lo, hi), col0=rng.uniform(0.0, config.lon_count),
                            vrow=rng.uniform(-0.5, 0.5), vcol=vcol,
                            peak=config.storm_peak, radius=config.storm_radius))
    return tuple(storms)


def gen_world(config: SynthConfig) -> WorldState:
    rng = make_rng(config.seed)
    depth = make_depth(config, rng)
    storms = make_storms(config, rng)
    u10, v10 = wind_at(config, storms, 0)
    ocean = depth.values < 0.0
    wave = equilibrium_wave(config, u10.values, v10.values, ocean, config.valid_time(0))
    logging.info(f'Generated world: {config.lat_count}x{config.lon_count}, '
                 f'{int(ocean.sum())} ocean cells, {len(storms)} storms')
    return WorldState(u10, v10, wave, depth, 0, config, storms)


def step_wind(state: WorldState) -> Tuple[GridField, GridField]:
    """Wind valid at step ``state.step + 1``."""
    return wind_at(state.config, state.storms, state.step + 1)


def advect(values: np.ndarray, ocean: np.ndarray, u: np.ndarray, v: np.ndarray,
           config: SynthConfig) -> np.ndarray:
    """Semi-Lagrangian, bilinear: wrap in longitude, clamp in latitude.
    Where the departure point touches land the local value is kept."""
    geometry = config.geometry
    lat_km, lon_km = cell_size_km(geometry)
    metres = config.advect_fraction * config.dt_seconds / 1000.0
    rows, cols = np.meshgrid(np.arange(geometry.lat_count, dtype=np.float64),
                             np.arange(geometry.lon_count, dtype=np.float64), indexing='ij')
    dep_rows = np.clip(rows - v * metres / lat_km, 0.0, geometry.lat_count - 1)
    dep_cols = cols - u * metres / lon_km
    coords = [dep_rows, dep_cols]
    filled = np.where(ocean, values, 0.0)
    moved = map_coordinates(filled, coords, order=1, mode='grid-wrap', prefilter=False)
    land_weight = map_coordinates((~ocean).astype(np.float64), coords, order=1,
                                  mode='grid-wrap', prefilter=False)
    return np.where(land_weight > 0.0, values, moved)


def step_wave(state: WorldState) -> WaveState:
    """Advance ``state.wave`` one step under ``state.u10/v10``, the wind
    valid at the new step."""
    config = state.config
    ocean = state.ocean
    u, v = state.u10.values, state.v10.values
    speed = np.hypot(u, v)
    swh = state.wave.swh.values
    relaxed = swh + config.relax_rate * (config.alpha * speed ** 2 - swh)
    swh_next = np.where(ocean, advect(relaxed, ocean, u, v, config), np.nan)
    mwp = np.where(ocean, np.maximum(MIN_PERIOD, config.period_coeff * speed), np.nan)
    mwd = np.where(ocean, wind_direction(u, v), np.nan)
    return WaveState.from_arrays(config.geometry, swh_next, mwp, mwd_deg=mwd,
                                 valid_time=state.u10.valid_time)


def advance(state: WorldState) -> WorldState:
    u10, v10 = step_wind(state)
    forced = replace(state, u10=u10, v10=v10)
    return replace(forced, wave=step_wave(forced), step=state.step + 1)


def split_counts(n_usable: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    if any(r < 0.0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f'Split ratios must be >= 0 and sum to 1, got {ratios}')
    n_train = int(round(ratios[0] * n_usable))
    n_val = int(round(ratios[1] * n_usable))
    n_test = n_usable - n_train - n_val
    counts = (n_train, n_val, n_test)
    for split, count, ratio in zip(SPLITS, counts, ratios):
        if ratio > 0.0 and count < 1:
            raise ConfigError(f'{n_usable} usable samples leave the {split} split empty')
    return counts


def time_tag(seconds: int) -> str:
    return format_time(seconds)[:13].replace('-', '').replace(':', '')


def field_path(seconds: int, variable: str) -> str:
    return os.path.join(FIELDS_DIR, f'{time_tag(seconds)}-{variable.lower()}.wgf')


def state_fields(state: WorldState) -> Dict[str, GridField]:
    return {'SWH': state.wave.swh, 'MWP': state.wave.mwp, 'MWD': state.wave.mwd(),
            'U10': state.u10, 'V10': state.v10}


class _RunningMoments:
    """Sums over ocean cells of the training time range."""

    def __init__(self, shape: Tuple[int, int]):
        self.count = 0
        self.sums = {var: 0.0 for var in ('SWH', 'MWP', 'U10', 'V10')}
        self.squares = dict(self.sums)
        self.climatology = {var: np.zeros(shape) for var in ('SWH', 'MWP')}

    def add(self, values: Dict[str, GridField], ocean: np.ndarray) -> None:
        self.count += 1
        for var in self.sums:
            cells = values[var].values[ocean]
            self.sums[var] += float(np.sum(cells))
            self.squares[var] += float(np.sum(cells * cells))
        for var in self.climatology:
            self.climatology[var] += np.where(ocean, values[var].values, 0.0)

    def norm_stats(self, n_ocean: int) -> NormStats:
        n = self.count * n_ocean
        means = {var: self.sums[var] / n for var in self.sums}
        stds = {var: math.sqrt(max(self.squares[var] / n - means[var] ** 2, 0.0))
                for var in self.sums}
        return NormStats(means, stds)


def gen_dataset(config: SynthConfig, ratios: Tuple[float, float, float], out_dir: str) -> dict:
    """Run the world for ``n_steps`` and write fields, chronological split
    manifests, NormStats (training times only) and climatology."""
    n_usable = config.n_steps - (config.t_in - 1) - config.leads
    if n_usable < 1:
        raise ConfigError(f'n_steps={config.n_steps} is too small for one sample '
                          f'(t_in={config.t_in}, leads={config.leads})')
    counts = split_counts(n_usable, ratios)
    first_init = config.t_in - 1
    splits = dict()
    start = first_init
    for split, count in zip(SPLITS, counts):
        if count:
            # Steps needed by the split's samples: history through last lead.
            splits[split] = (start - first_init, start + count - 1 + config.leads)
        start += count
    train_range = splits['train']

    state = gen_world(config)
    ocean = state.ocean
    write_wgf(state.depth, os.path.join(out_dir, DEPTH_FILE))
    moments = _RunningMoments(config.geometry.shape)
    records = {split: list() for split in splits}
    all_records = [ManifestRecord(-1, 'DEPTH', None, DEPTH_FILE)]
    for step in range(config.n_steps):
        if step:
            state = advance(state)
        values = state_fields(state)
        time = config.valid_time(step)
        step_records = list()
        for var in FIELD_VARS:
            path = field_path(time, var)
            write_wgf(values[var], os.path.join(out_dir, path))
            step_records.append(ManifestRecord(time, var, None, path))
        all_records += step_records
        for split, (lo, hi) in splits.items():
            if lo <= step <= hi:
                records[split] += step_records
        if train_range[0] <= step <= train_range[1]:
            moments.add(values, ocean)
        if step % 100 == 0:
            logging.info(f'Generated step {step}/{config.n_steps}')

    for split, split_records in records.items():
        ManifestFileHandler(output=os.path.join(out_dir, split_manifest_name(split))).write(
            [ManifestRecord(-1, 'DEPTH', None, DEPTH_FILE)] + split_records)
    ManifestFileHandler(output=os.path.join(out_dir, ALL_MANIFEST)).write(all_records)

    stats = moments.norm_stats(int(ocean.sum()))
    for var, total in moments.climatology.items():
        clim = np.where(ocean, total / moments.count, np.nan)
        field = GridField(VarId[var], config.geometry, clim)
        write_wgf(field, os.path.join(out_dir, CLIMATOLOGY_DIR, f'{var.lower()}.wgf'))

    meta = {
        'format': DATASET_FORMAT,
        'synth': config.as_dict(),
        't_in': config.t_in,
        'leads': config.leads,
        'dt_seconds': config.dt_seconds,
        'counts': dict(zip(SPLITS, counts)),
        'steps': {split: list(bounds) for split, bounds in splits.items()},
        'norm_stats': stats.as_dict(),
    }
    MsgpackFileHandler(output=os.path.join(out_dir, META_FILE)).write(meta)
    logging.info(f'Dataset written to {out_dir}: train/val/test = {counts}')
    return meta


def perturb_winds(data_dir: str, sigma: float, seed: int, out_dir: str) -> str:
    """Copy every wind field of a dataset with N(0, sigma^2) noise added per
    cell; stands in for forecast winds. Returns the wind manifest path."""
    if sigma < 0.0:
        raise ConfigError(f'Wind noise sigma must be >= 0, got {sigma}')
    rng = make_rng(seed)
    source = ManifestFileHandler(input_=os.path.join(data_dir, ALL_MANIFEST))
    records = list()
    for record in source.read():
        if record.variable not in ('U10', 'V10'):
            continue
        field = read_wgf(source.resolve(record))
        noisy = field.values + rng.normal(0.0, sigma, size=field.values.shape)
        path = os.path.basename(record.path)
        write_wgf(field.with_values(noisy), os.path.join(out_dir, path))
        records.append(ManifestRecord(record.time, record.variable, None, path))
    output = os.path.join(out_dir, WIND_MANIFEST)
    ManifestFileHandler(output=output).write(records)
    logging.info(f'Wrote {len(records)} perturbed wind fields (sigma={sigma}) to {out_dir}')
    return output
