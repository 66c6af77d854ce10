"""Forecast verification: RMSE maps, thresholded relative error, RMSE by
wave height, anomaly correlation and per-lead skill curves.

Array arguments are stacked over forecast instances, [I, H, W]. MWD errors
are circular and only count where truth SWH reaches ``min_swh``.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from file_handlers.common import write_csv
from file_handlers.ppm import PpmFileHandler
from wavecast.errors import (ConfigError, ContractError, DomainError, EmptySelectionError,
                             UndefinedScoreError)
from wavecast.gridio import GridField, GridGeometry, LandMask, VarId, WaveState
from wavecast.rollout import ForecastSeries, persistence_forecast

VARIABLES = ('SWH', 'MWP', 'MWD')
MRE_VARIABLES = ('SWH', 'MWP')
# MWD is circular and has no linear anomaly.
ACC_VARIABLES = ('SWH', 'MWP')
MWD_MIN_SWH = 0.1
PERSISTENCE = 'persistence'

FIG3_HEADER = ('lat', 'lon', 'value')
FIG5_HEADER = ('variable', 'bin', 'lead', 'value', 'count')
FIG7_HEADER = ('label', 'variable', 'lead', 'rmse')
SCORES_HEADER = ('label', 'variable', 'lead', 'metric', 'value')
SCORES_FILE = 'scores.csv'
FIG5_FILE = 'fig5_rmse_by_height.csv'
FIG7_FILE = 'fig7_skill_curves.csv'


def fig3_name(variable: str, lead: int) -> str:
    return f'fig3_rmse_map_{variable.lower()}_{lead}.csv'


def fig4_name(variable: str, lead: int) -> str:
    return f'fig4_mre_{variable.lower()}_{lead}.csv'


def circ_diff(a, b):
    """Smallest angle between two directions, degrees in [0, 180]."""
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


def errors(preds: np.ndarray, truths: np.ndarray, variable: str) -> np.ndarray:
    if preds.shape != truths.shape:
        raise ContractError(f'Forecast shape {preds.shape} does not match truth {truths.shape}')
    if variable == 'MWD':
        return circ_diff(preds, truths)
    return preds - truths


def valid_cells(mask: LandMask, variable: str, truth_swh: Optional[np.ndarray],
                shape: Tuple[int, ...], min_swh: float = MWD_MIN_SWH) -> np.ndarray:
    """[I, H, W] selection of scored (instance, cell) pairs."""
    valid = np.broadcast_to(mask.ocean, shape).copy()
    if variable == 'MWD' and truth_swh is not None:
        valid &= truth_swh >= min_swh
    return valid


def rmse_map(preds: np.ndarray, truths: np.ndarray, mask: LandMask, variable: str,
             geometry: GridGeometry, truth_swh: Optional[np.ndarray] = None,
             min_swh: float = MWD_MIN_SWH) -> GridField:
    """Per-cell RMSE over instances; land (and never-scored cells) NaN."""
    if preds.shape[0] == 0:
        raise DomainError('rmse_map needs at least one forecast instance')
    err = errors(preds, truths, variable)
    valid = valid_cells(mask, variable, truth_swh, err.shape, min_swh)
    squared = np.where(valid, err, 0.0) ** 2
    counts = valid.sum(axis=0)
    with np.errstate(invalid='ignore', divide='ignore'):
        values = np.where(counts > 0, np.sqrt(squared.sum(axis=0) / counts), np.nan)
    return GridField(VarId[variable], geometry, values)


def global_rmse(preds: np.ndarray, truths: np.ndarray, mask: LandMask, variable: str,
                weights: Optional[np.ndarray] = None, truth_swh: Optional[np.ndarray] = None,
                min_swh: float = MWD_MIN_SWH) -> float:
    """Area-weighted RMSE pooled over instances and ocean cells."""
    err = errors(preds, truths, variable)
    valid = valid_cells(mask, variable, truth_swh, err.shape, min_swh)
    if not valid.any():
        raise EmptySelectionError(f'No {variable} cells to score')
    w = np.ones(mask.ocean.shape) if weights is None else weights
    w = np.broadcast_to(w, err.shape)
    return math.sqrt(float(np.sum(w[valid] * err[valid] ** 2) / np.sum(w[valid])))


def mre_threshold(preds: np.ndarray, truths: np.ndarray, truth_swh: np.ndarray,
                  mask: LandMask, threshold: float = 1.0) -> Tuple[float, np.ndarray]:
    """Mean |pred - truth| / truth over points with truth SWH >= threshold;
    returns (scalar, [H, W] map with NaN where no instance passed)."""
    if not threshold > 0.0:
        raise ConfigError(f'MRE threshold must be > 0, got {threshold}')
    valid = valid_cells(mask, 'SWH', None, truths.shape) & (truth_swh >= threshold)
    if not valid.any():
        raise EmptySelectionError(f'No truth SWH reaches the {threshold} m MRE threshold')
    with np.errstate(invalid='ignore', divide='ignore'):
        relative = np.where(valid, np.abs(preds - truths) / truths, 0.0)
    counts = valid.sum(axis=0)
    with np.errstate(invalid='ignore', divide='ignore'):
        cell_map = np.where(counts > 0, relative.sum(axis=0) / counts, np.nan)
    return float(relative[valid].mean()), cell_map


@dataclass(frozen=True)
class HeightBins:
    centers: Tuple[float, ...] = tuple(float(h) for h in range(1, 9))
    half_width: float = 0.5

    def __post_init__(self):
        centers = np.asarray(self.centers)
        if self.half_width <= 0.0 or np.any(np.diff(centers) < 2.0 * self.half_width):
            raise ConfigError(f'Height bins overlap: {self.centers} +/- {self.half_width}')

    def assign(self, heights: np.ndarray) -> np.ndarray:
        """Bin index per value, -1 outside every bin."""
        index = np.full(np.shape(heights), -1, dtype=np.int64)
        for i, center in enumerate(self.centers):
            inside = (heights >= center - self.half_width) & (heights < center + self.half_width)
            index[inside] = i
        return index


def rmse_by_height(preds: Dict[str, np.ndarray], truths: Dict[str, np.ndarray], mask: LandMask,
                   lead: int, bins: HeightBins = HeightBins()) -> List[tuple]:
    """Rows (variable, bin center, lead, rmse, count), binned on truth SWH.
    Empty bins carry NaN and count 0."""
    index = bins.assign(truths['SWH'])
    rows = list()
    for variable in VARIABLES:
        err = errors(preds[variable], truths[variable], variable)
        valid = valid_cells(mask, variable, truths['SWH'], err.shape)
        for i, center in enumerate(bins.centers):
            selected = valid & (index == i)
            count = int(selected.sum())
            value = math.sqrt(float(np.mean(err[selected] ** 2))) if count else math.nan
            rows.append((variable, center, lead, value, count))
    return rows


def acc(pred: np.ndarray, truth: np.ndarray, climatology: np.ndarray, mask: LandMask,
        weights: Optional[np.ndarray] = None) -> float:
    """Weighted centered correlation of (pred - clim) and (truth - clim)
    over ocean cells."""
    ocean = mask.ocean
    w = np.ones(ocean.shape) if weights is None else np.asarray(weights)
    w = w[ocean]
    a = (pred - climatology)[ocean]
    t = (truth - climatology)[ocean]
    a = a - np.sum(w * a) / np.sum(w)
    t = t - np.sum(w * t) / np.sum(w)
    var_a = float(np.sum(w * a * a))
    var_t = float(np.sum(w * t * t))
    tiny = 1e-20 * float(np.sum(w))
    if var_a <= tiny or var_t <= tiny:
        raise UndefinedScoreError('Anomaly correlation undefined: zero anomaly variance')
    return float(np.sum(w * a * t) / math.sqrt(var_a * var_t))


def lead_stacks(series_list: Sequence[ForecastSeries], lead: int,
                truth: Callable[[int], WaveState]) -> Tuple[Dict[str, np.ndarray],
                                                            Dict[str, np.ndarray]]:
    """(preds, truths) per variable for one lead, stacked over inits."""
    preds = {var: list() for var in VARIABLES}
    truths = {var: list() for var in VARIABLES}
    for series in series_list:
        pred = series.lead(lead)
        actual = truth(series.valid_time(lead))
        actual.geometry.check_same(pred.geometry)
        for state, out in ((pred, preds), (actual, truths)):
            out['SWH'].append(state.swh.values)
            out['MWP'].append(state.mwp.values)
            out['MWD'].append(state.mwd().values)
    return ({var: np.stack(v) for var, v in preds.items()},
            {var: np.stack(v) for var, v in truths.items()})


def check_same_period(entries: Sequence[Tuple[str, Sequence[ForecastSeries]]]) -> None:
    reference = None
    for label, series_list in entries:
        period = (tuple(s.init_time for s in series_list),
                  min(s.leads for s in series_list) if series_list else 0)
        if reference is None:
            reference = (label, period)
        elif period != reference[1]:
            raise ContractError(f'Forecast set {label} covers a different test period than '
                                f'{reference[0]}')


def skill_curves(entries: Sequence[Tuple[str, Sequence[ForecastSeries]]],
                 truth: Callable[[int], WaveState], mask: LandMask,
                 weights: Optional[np.ndarray] = None) -> List[tuple]:
    """Rows (label, variable, lead, rmse) for every label, variable and lead."""
    check_same_period(entries)
    rows = list()
    for label, series_list in entries:
        for lead in range(1, series_list[0].leads + 1):
            preds, truths = lead_stacks(series_list, lead, truth)
            for variable in VARIABLES:
                rmse = global_rmse(preds[variable], truths[variable], mask, variable, weights,
                                   truths['SWH'])
                rows.append((label, variable, lead, rmse))
    return rows


@dataclass
class MetricsReport:
    label: str
    leads: int
    rmse_maps: Dict[Tuple[str, int], GridField] = field(default_factory=dict)
    mre_maps: Dict[Tuple[str, int], np.ndarray] = field(default_factory=dict)
    height_rows: List[tuple] = field(default_factory=list)
    skill_rows: List[tuple] = field(default_factory=list)
    score_rows: List[tuple] = field(default_factory=list)

    def write(self, out_dir: str, geometry: GridGeometry, ppm: bool = False) -> List[str]:
        written = list()
        lats, lons = geometry.lats(), geometry.lons()
        for (variable, lead), grid_field in sorted(self.rmse_maps.items()):
            path = os.path.join(out_dir, fig3_name(variable, lead))
            write_csv([FIG3_HEADER] + map_rows(grid_field.values, lats, lons), path)
            written.append(path)
            if ppm:
                PpmFileHandler(path[:-len('.csv')] + '.ppm').write(grid_field.values)
        for (variable, lead), values in sorted(self.mre_maps.items()):
            path = os.path.join(out_dir, fig4_name(variable, lead))
            write_csv([FIG3_HEADER] + map_rows(values, lats, lons), path)
            written.append(path)
        for name, header, rows in ((FIG5_FILE, FIG5_HEADER, self.height_rows),
                                   (FIG7_FILE, FIG7_HEADER, self.skill_rows),
                                   (SCORES_FILE, SCORES_HEADER, self.score_rows)):
            path = os.path.join(out_dir, name)
            write_csv([header] + [list(row) for row in rows], path)
            written.append(path)
        return written


def map_rows(values: np.ndarray, lats: np.ndarray, lons: np.ndarray) -> List[list]:
    return [[float(lat), float(lon), float(values[i, j])]
            for i, lat in enumerate(lats) for j, lon in enumerate(lons)]


def evaluate(entries: Sequence[Tuple[str, Sequence[ForecastSeries]]],
             truth: Callable[[int], WaveState], mask: LandMask, geometry: GridGeometry,
             climatology: Dict[str, np.ndarray], mre_threshold_m: float = 1.0,
             min_swh: float = MWD_MIN_SWH, lat_weighted: bool = True) -> MetricsReport:
    """Score every forecast set plus persistence from the same inits. Maps
    and height bins describe the first set."""
    if not entries:
        raise ConfigError('evaluate needs at least one forecast set')
    label, primary = entries[0]
    if not primary:
        raise DomainError(f'Forecast set {label} is empty')
    for _, series_list in entries:
        for series in series_list:
            geometry.check_same(series.lead(1).geometry)
    leads = primary[0].leads
    weights = geometry.cos_lat_weights() if lat_weighted else None
    if PERSISTENCE not in [name for name, _ in entries]:
        persistence = [persistence_forecast(truth(s.init_time), leads, s.dt_seconds)
                       for s in primary]
        entries = list(entries) + [(PERSISTENCE, persistence)]
    report = MetricsReport(label, leads)
    report.skill_rows = skill_curves(entries, truth, mask, weights)
    for name, variable, lead, rmse in report.skill_rows:
        report.score_rows.append((name, variable, lead, 'rmse', rmse))
    for name, series_list in entries:
        for lead in range(1, leads + 1):
            preds, truths = lead_stacks(series_list, lead, truth)
            if name == label:
                for variable in VARIABLES:
                    report.rmse_maps[(variable, lead)] = rmse_map(
                        preds[variable], truths[variable], mask, variable, geometry,
                        truths['SWH'], min_swh)
                report.height_rows += rmse_by_height(preds, truths, mask, lead)
            for variable in MRE_VARIABLES:
                try:
                    score, cell_map = mre_threshold(preds[variable], truths[variable],
                                                    truths['SWH'], mask, mre_threshold_m)
                except EmptySelectionError as e:
                    logging.warning(f'{name} lead {lead} {variable}: {e}')
                    continue
                report.score_rows.append((name, variable, lead, 'mre', score))
                if name == label:
                    report.mre_maps[(variable, lead)] = cell_map
            for variable in ACC_VARIABLES:
                try:
                    scores = [acc(p, t, climatology[variable], mask, weights)
                              for p, t in zip(preds[variable], truths[variable])]
                except UndefinedScoreError as e:
                    logging.warning(f'{name} lead {lead} {variable}: {e}')
                    continue
                report.score_rows.append((name, variable, lead, 'acc', float(np.mean(scores))))
    logging.info(f'Scored {len(entries)} forecast sets over {len(primary)} inits, '
                 f'{leads} leads')
    return report
