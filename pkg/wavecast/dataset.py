"""Read side of a generated dataset: manifests, NormStats, depth, climatology
and the (history, forcing, target) samples both models train on."""
import logging
import os
from collections import OrderedDict, defaultdict
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from file_handlers.manifest import ManifestFileHandler, format_time, parse_time
from file_handlers.msgpack import MsgpackFileHandler
from file_handlers.wgf import read_wgf
from wavecast.errors import ConfigError, DataError, FormatError, MissingWindError
from wavecast.gridio import (WAVE_CHANNELS, WIND_CHANNELS, GridField, GridGeometry, NormStats,
                             WaveState, derive_mask, encode_direction_array, normalize_stack)
from wavecast.synthwave import (ALL_MANIFEST, CLIMATOLOGY_DIR, DATASET_FORMAT, DEPTH_FILE,
                                META_FILE, SPLITS, split_manifest_name)
from wavecast.vit import ModelInput

WAVE_FIELD_VARS = ('SWH', 'MWP', 'MWD')
WIND_FIELD_VARS = ('U10', 'V10')
DEFAULT_CACHE_STEPS = 8


class FieldCache:
    """Least-recently-used map of at most ``capacity`` arrays."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f'Cache capacity must be >= 1, got {capacity}')
        self.capacity = capacity
        self._items: OrderedDict = OrderedDict()

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._items

    def get(self, key: Hashable, load: Callable[[], np.ndarray]) -> np.ndarray:
        if key in self._items:
            self._items.move_to_end(key)
            return self._items[key]
        value = load()
        self._items[key] = value
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return value

    def clear(self) -> None:
        self._items.clear()


class FieldSeries:
    """Time-indexed fields listed by one manifest, read lazily and cached."""

    def __init__(self, manifest: str, geometry: GridGeometry,
                 variables: Sequence[str] = WAVE_FIELD_VARS + WIND_FIELD_VARS,
                 cache_steps: int = DEFAULT_CACHE_STEPS):
        handler = ManifestFileHandler(input_=manifest)
        self.manifest = manifest
        self.geometry = geometry
        self.variables = tuple(variables)
        self._paths: Dict[int, Dict[str, str]] = defaultdict(dict)
        for record in handler.read():
            if record.time < 0 or record.variable not in self.variables:
                continue
            self._paths[record.time][record.variable] = handler.resolve(record)
        for time, paths in self._paths.items():
            missing = [var for var in self.variables if var not in paths]
            if missing:
                raise FormatError(f'Manifest {manifest} lacks {",".join(missing)} '
                                  f'at {format_time(time)}')
        self.times: List[int] = sorted(self._paths)
        self._index = {time: i for i, time in enumerate(self.times)}
        self._cache = FieldCache(cache_steps * len(self.variables))

    def __len__(self) -> int:
        return len(self.times)

    def __contains__(self, time: int) -> bool:
        return time in self._index

    def index(self, time: int) -> int:
        return self._index[time]

    def field(self, time: int, variable: str) -> np.ndarray:
        if time not in self._index:
            raise DataError(f'{self.manifest} has no {variable} field at {format_time(time)}')

        def load():
            field = read_wgf(self._paths[time][variable])
            self.geometry.check_same(field.geometry)
            return field.values

        return self._cache.get((time, variable), load)

    def wave_stack(self, time: int) -> np.ndarray:
        """Physical [4, H, W]: swh, mwp, sin, cos."""
        sin, cos = encode_direction_array(self.field(time, 'MWD'))
        return np.stack([self.field(time, 'SWH'), self.field(time, 'MWP'), sin, cos])

    def wave_state(self, time: int) -> WaveState:
        return WaveState.from_stack(self.geometry, self.wave_stack(time), time)

    def wind_stack(self, time: int) -> np.ndarray:
        if time not in self._index:
            raise MissingWindError(format_time(time))
        return np.stack([self.field(time, var) for var in WIND_FIELD_VARS])

    def init_times(self, t_in: int, max_lead: int) -> List[int]:
        """Times with ``t_in`` steps of history and ``max_lead`` steps ahead."""
        return self.times[t_in - 1:len(self.times) - max_lead]


class WaveDataset:
    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self.meta = MsgpackFileHandler(input_=os.path.join(data_dir, META_FILE)).read()
        if self.meta.get('format') != DATASET_FORMAT:
            raise FormatError(f'Unsupported dataset format {self.meta.get("format")} '
                              f'in {data_dir}')
        self.norm_stats = NormStats.from_dict(self.meta['norm_stats'])
        self.depth = read_wgf(os.path.join(data_dir, DEPTH_FILE))
        self.mask = derive_mask(self.depth)
        self.geometry = self.depth.geometry
        self.t_in = int(self.meta['t_in'])
        self.leads = int(self.meta['leads'])
        self.dt_seconds = int(self.meta['dt_seconds'])
        self._series: Dict[str, FieldSeries] = dict()
        # History, target and forcing steps of one sample or one rollout.
        self.cache_steps = 2 * self.t_in + self.leads + 2
        self._normalized = FieldCache(2 * self.cache_steps)
        logging.info(f'Loaded dataset {data_dir}: grid {self.geometry}, '
                     f'{self.mask.ocean_count} ocean cells, counts {self.meta["counts"]}')

    def series(self, split: str = 'all') -> FieldSeries:
        if split not in self._series:
            if split == 'all':
                manifest = ALL_MANIFEST
            elif split in SPLITS:
                manifest = split_manifest_name(split)
            else:
                raise ConfigError(f'Unknown split: {split}')
            path = os.path.join(self.data_dir, manifest)
            if not os.path.exists(path):
                raise ConfigError(f'Dataset {self.data_dir} has no {split} split')
            self._series[split] = FieldSeries(path, self.geometry, cache_steps=self.cache_steps)
        return self._series[split]

    def climatology(self, variable: str) -> GridField:
        field = read_wgf(os.path.join(self.data_dir, CLIMATOLOGY_DIR, f'{variable.lower()}.wgf'))
        self.geometry.check_same(field.geometry)
        return field

    def normalized_wave(self, series: FieldSeries, time: int) -> np.ndarray:
        return self._normalized.get(
            (series.manifest, time, 'wave'),
            lambda: normalize_stack(series.wave_stack(time), self.norm_stats, self.mask,
                                    WAVE_CHANNELS))

    def normalized_wind(self, wind: np.ndarray) -> np.ndarray:
        return normalize_stack(wind, self.norm_stats, self.mask, WIND_CHANNELS)

    def model_input(self, history: Sequence[np.ndarray], winds: Sequence[np.ndarray]) -> ModelInput:
        """Normalized history (oldest first) and normalized winds ending at
        the target time."""
        return ModelInput(np.stack(history), np.stack(winds), self.depth, self.mask)

    def sample(self, series: FieldSeries, init: int, t_in: int,
               t_force: int) -> Tuple[ModelInput, np.ndarray]:
        """One-step sample at ``init``: (input, normalized truth at init + dt)."""
        dt = self.dt_seconds
        history = [self.normalized_wave(series, init - k * dt) for k in range(t_in - 1, -1, -1)]
        target_time = init + dt
        winds = list()
        for k in range(t_force - 1, -1, -1):
            time = target_time - k * dt
            winds.append(self._normalized.get(
                (series.manifest, time, 'wind'),
                lambda: self.normalized_wind(series.wind_stack(time))))
        return self.model_input(history, winds), self.normalized_wave(series, target_time)

    def sample_times(self, split: str, t_in: int, t_force: int) -> List[int]:
        if t_force > t_in + 1:
            raise ConfigError(f't_force={t_force} needs winds older than the wave history '
                              f'(t_in={t_in})')
        times = self.series(split).init_times(t_in, self.leads)
        if not times:
            raise ConfigError(f'The {split} split of {self.data_dir} has no samples '
                              f'for t_in={t_in}')
        return times


def time_window(times: Sequence[int], init: Optional[str]) -> List[int]:
    """Resolve an ``--init-time`` value (ISO time or ``all``) against ``times``."""
    if init is None or init == 'all':
        return list(times)
    wanted = parse_time(init)
    if wanted not in times:
        raise ConfigError(f'Init time {init} is not an init time of the split')
    return [wanted]
