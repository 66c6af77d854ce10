"""Storm case study: forecast and observed fields inside a lat/lon window at
a few leads, plus the error of the maximum wave height and its position."""
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from file_handlers.common import write_csv
from wavecast.dataset import WaveDataset
from wavecast.errors import BoundsError, ConfigError
from wavecast.gridio import GridGeometry, WaveState
from wavecast.rollout import WindSource, rollout

CASE_LEADS = (1, 4, 7)
CASE_VARIABLES = ('SWH', 'MWP', 'MWD')
FORECAST = 'forecast'
OBSERVED = 'observed'
REPORT_FILE = 'fig6_report.csv'
REPORT_HEADER = ('lead', 'max_swh_forecast', 'max_swh_observed', 'max_swh_error',
                 'center_displacement')
FIELD_HEADER = ('lat', 'lon', 'value')


@dataclass(frozen=True)
class Window:
    """Latitude band [lat_a, lat_b]; longitude arc from lon_a eastward to
    lon_b, wrapping through 360 when lon_a > lon_b; a span of 360 or more
    covers every longitude. Degrees."""
    lat_a: float
    lat_b: float
    lon_a: float
    lon_b: float

    def indices(self, geometry: GridGeometry) -> Tuple[np.ndarray, np.ndarray]:
        if not -90.0 <= self.lat_a <= self.lat_b <= 90.0:
            raise BoundsError(f'Window latitudes {self.lat_a}:{self.lat_b} outside [-90, 90]')
        if not (-360.0 <= self.lon_a <= 360.0 and -360.0 <= self.lon_b <= 360.0):
            raise BoundsError(f'Window longitudes {self.lon_a}:{self.lon_b} outside [-360, 360]')
        lats = geometry.lats()
        rows = np.nonzero((lats >= self.lat_a) & (lats <= self.lat_b))[0]
        lons = geometry.lons() % 360.0
        lon_a, lon_b = self.lon_a % 360.0, self.lon_b % 360.0
        full = self.lon_b - self.lon_a >= 360.0
        if full:
            inside = np.ones(lons.shape, dtype=bool)
        elif lon_a <= lon_b:
            inside = (lons >= lon_a) & (lons <= lon_b)
        else:
            inside = (lons >= lon_a) | (lons <= lon_b)
        cols = np.nonzero(inside)[0]
        if full or lon_a > lon_b:
            cols = np.concatenate([cols[lons[cols] >= lon_a], cols[lons[cols] < lon_a]])
        if rows.size == 0 or cols.size == 0:
            raise BoundsError(f'Window {self} selects no grid cell of {geometry}')
        return rows, cols

    def __str__(self) -> str:
        return f'{self.lat_a:g}:{self.lat_b:g},{self.lon_a:g}:{self.lon_b:g}'


def parse_window(text: str) -> Window:
    """``lat_a:lat_b,lon_a:lon_b`` in degrees."""
    try:
        lat_part, lon_part = text.split(',')
        lat_a, lat_b = (float(v) for v in lat_part.split(':'))
        lon_a, lon_b = (float(v) for v in lon_part.split(':'))
    except ValueError:
        raise ConfigError(f'Malformed window {text!r} (expected lat_a:lat_b,lon_a:lon_b)') from None
    return Window(lat_a, lat_b, lon_a, lon_b)


def storm_window(state: WaveState, half_rows: int = 4, half_cols: int = 8) -> Window:
    """Window centred on the highest SWH of ``state``."""
    geometry = state.geometry
    row, col = np.unravel_index(int(np.nanargmax(state.swh.values)), geometry.shape)
    lats = geometry.lats()
    lat_a = lats[max(row - half_rows, 0)]
    lat_b = lats[min(row + half_rows, geometry.lat_count - 1)]
    if 2 * half_cols + 1 >= geometry.lon_count:
        lon_a, lon_b = geometry.lon0, geometry.lons()[-1]
    else:
        lon_a = geometry.lon0 + geometry.dlon * ((col - half_cols) % geometry.lon_count)
        lon_b = geometry.lon0 + geometry.dlon * ((col + half_cols) % geometry.lon_count)
    return Window(float(lat_a), float(lat_b), float(lon_a), float(lon_b))


def window_max(values: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> Tuple[float, int, int]:
    sub = values[np.ix_(rows, cols)]
    i, j = np.unravel_index(int(np.nanargmax(sub)), sub.shape)
    return float(sub[i, j]), int(rows[i]), int(cols[j])


def displacement(a: Tuple[int, int], b: Tuple[int, int], lon_count: int) -> float:
    """Grid-cell distance, periodic in longitude."""
    d_col = abs(a[1] - b[1]) % lon_count
    return math.hypot(a[0] - b[0], min(d_col, lon_count - d_col))


@dataclass
class CaseStudy:
    window: Window
    init_time: int
    fields: Dict[Tuple[str, str, int], List[list]]
    report: List[tuple]

    def write(self, out_dir: str) -> List[str]:
        written = list()
        for (source, variable, lead), rows in sorted(self.fields.items()):
            path = os.path.join(out_dir, f'fig6_{source}_{variable.lower()}_{lead}.csv')
            write_csv([FIELD_HEADER] + rows, path)
            written.append(path)
        path = os.path.join(out_dir, REPORT_FILE)
        write_csv([REPORT_HEADER] + [list(row) for row in self.report], path)
        written.append(path)
        return written


def _window_rows(state: WaveState, variable: str, rows: np.ndarray,
                 cols: np.ndarray) -> List[list]:
    values = {'SWH': state.swh.values, 'MWP': state.mwp.values,
              'MWD': state.mwd().values}[variable]
    lats, lons = state.geometry.lats(), state.geometry.lons()
    return [[float(lats[i]), float(lons[j]), float(values[i, j])] for i in rows for j in cols]


def case_study(model, dataset: WaveDataset, init_time: int, winds: WindSource,
               window: Window = None, leads: Sequence[int] = CASE_LEADS) -> CaseStudy:
    """Roll out from ``init_time`` and compare against the observed fields
    inside ``window`` (default: centred on the observed storm at the
    middle lead)."""
    leads = sorted(k for k in leads if k >= 1)
    if not leads:
        raise ConfigError('Case study needs at least one lead >= 1')
    forecast = rollout(model, dataset, init_time, winds, max(leads))
    truth = dataset.series('all')
    observed = {k: truth.wave_state(forecast.valid_time(k)) for k in leads}
    if window is None:
        window = storm_window(observed[leads[len(leads) // 2]])
    rows, cols = window.indices(dataset.geometry)
    fields, report = dict(), list()
    for k in leads:
        for source, state in ((FORECAST, forecast.lead(k)), (OBSERVED, observed[k])):
            for variable in CASE_VARIABLES:
                fields[(source, variable, k)] = _window_rows(state, variable, rows, cols)
        peak_f, row_f, col_f = window_max(forecast.lead(k).swh.values, rows, cols)
        peak_o, row_o, col_o = window_max(observed[k].swh.values, rows, cols)
        report.append((k, peak_f, peak_o, peak_f - peak_o,
                       displacement((row_f, col_f), (row_o, col_o), dataset.geometry.lon_count)))
    return CaseStudy(window, init_time, fields, report)
