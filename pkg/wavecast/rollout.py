"""Autoregressive multi-lead forecasts, wind sources and forecast I/O.

A forecast directory holds one WGF per (init, lead, channel), a manifest
with records ``<valid-time> <CHANNEL>@<lead> <path>`` and a metadata blob.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from file_handlers.manifest import ManifestFileHandler, ManifestRecord, format_time
from file_handlers.msgpack import MsgpackFileHandler
from file_handlers.wgf import read_wgf, write_wgf
from wavecast.dataset import WIND_FIELD_VARS, FieldSeries, WaveDataset
from wavecast.errors import ConfigError, FormatError
from wavecast.gridio import (WAVE_CHANNELS, WaveState, denormalize_stack,
                             normalize_stack, renormalize_direction)
from wavecast.synthwave import WIND_MANIFEST, time_tag

FORECAST_MANIFEST = 'forecast.manifest'
FORECAST_META = 'forecast.msgpack.bz2'
FORECAST_FORMAT = 1
TRUTH_WIND = 'truth'
FILE_WIND_PREFIX = 'file:'


@dataclass
class ForecastSeries:
    """Denormalized predictions for leads 1..L from one init time."""
    init_time: int
    dt_seconds: int
    states: List[WaveState]
    wind_source: str = TRUTH_WIND
    model: str = ''

    @property
    def leads(self) -> int:
        return len(self.states)

    def lead(self, k: int) -> WaveState:
        return self.states[k - 1]

    def valid_time(self, k: int) -> int:
        return self.init_time + k * self.dt_seconds


class WindSource:
    """Physical 10 m wind by valid time; raises MissingWindError for
    steps the source does not cover."""

    def __init__(self, tag: str, series: FieldSeries):
        self.tag = tag
        self.series = series

    def wind_at(self, time: int) -> np.ndarray:
        return self.series.wind_stack(time)


def open_wind_source(spec: str, dataset: WaveDataset) -> WindSource:
    """``truth`` or ``file:<manifest or directory>``."""
    if spec == TRUTH_WIND:
        return WindSource(spec, dataset.series('all'))
    if not spec.startswith(FILE_WIND_PREFIX):
        raise ConfigError(f'Unknown wind source {spec!r} (expected truth or file:<path>)')
    path = spec[len(FILE_WIND_PREFIX):]
    if os.path.isdir(path):
        path = os.path.join(path, WIND_MANIFEST)
    if not os.path.exists(path):
        raise ConfigError(f'Wind manifest not found: {path}')
    return WindSource(spec, FieldSeries(path, dataset.geometry, WIND_FIELD_VARS,
                                          cache_steps=dataset.cache_steps))


def postprocess(stack: np.ndarray) -> np.ndarray:
    """Project predicted (sin, cos) back onto the unit circle and clip
    negative SWH, both in physical units."""
    out = stack.copy()
    out[2], out[3] = renormalize_direction(stack[2], stack[3])
    out[0] = np.maximum(out[0], 0.0)
    return out


def rollout(model, dataset: WaveDataset, init_time: int, winds: WindSource,
            leads: int) -> ForecastSeries:
    """Feed each lead's prediction back as the newest history step. Only
    truth waves up to ``init_time`` and winds from ``winds`` are read."""
    if leads < 1:
        raise ConfigError(f'leads must be >= 1, got {leads}')
    truth = dataset.series('all')
    dt = dataset.dt_seconds
    stats, mask = dataset.norm_stats, dataset.mask
    history = [dataset.normalized_wave(truth, init_time - k * dt)
               for k in range(model.t_in - 1, -1, -1)]
    states = list()
    for k in range(1, leads + 1):
        target = init_time + k * dt
        forcing = [dataset.normalized_wind(winds.wind_at(target - j * dt))
                   for j in range(model.t_force - 1, -1, -1)]
        pred = model.forward(dataset.model_input(history, forcing)).data.astype(np.float64)
        physical = postprocess(denormalize_stack(pred, stats, mask, WAVE_CHANNELS))
        states.append(WaveState.from_stack(dataset.geometry, physical, target))
        history = history[1:] + [normalize_stack(physical, stats, mask, WAVE_CHANNELS)]
    return ForecastSeries(init_time, dt, states, winds.tag, getattr(model, 'kind', ''))


def persistence_forecast(init_state: WaveState, leads: int, dt_seconds: int) -> ForecastSeries:
    stack = init_state.stack()
    states = [WaveState.from_stack(init_state.geometry, stack, init_state.valid_time + k * dt_seconds)
              for k in range(1, leads + 1)]
    return ForecastSeries(init_state.valid_time, dt_seconds, states, TRUTH_WIND, 'persistence')


def forecast_path(init_time: int, lead: int, channel: str) -> str:
    return os.path.join('fields', time_tag(init_time), f'{channel.lower()}-{lead:02d}.wgf')


def write_forecasts(series_list: Sequence[ForecastSeries], out_dir: str) -> str:
    """Write every series into ``out_dir``; returns the manifest path."""
    if not series_list:
        raise ConfigError('No forecasts to write')
    records = list()
    for series in series_list:
        for k in range(1, series.leads + 1):
            fields = series.lead(k).fields()
            for channel in WAVE_CHANNELS:
                path = forecast_path(series.init_time, k, channel)
                write_wgf(fields[channel], os.path.join(out_dir, path))
                records.append(ManifestRecord(series.valid_time(k), channel, k, path))
    manifest = os.path.join(out_dir, FORECAST_MANIFEST)
    ManifestFileHandler(output=manifest).write(records)
    first = series_list[0]
    MsgpackFileHandler(output=os.path.join(out_dir, FORECAST_META)).write({
        'format': FORECAST_FORMAT,
        'model': first.model,
        'wind_source': first.wind_source,
        'dt_seconds': first.dt_seconds,
        'leads': first.leads,
        'init_times': [s.init_time for s in series_list],
    })
    logging.info(f'Wrote {len(series_list)} forecasts x {first.leads} leads to {out_dir}')
    return manifest


def read_forecasts(forecast_dir: str) -> List[ForecastSeries]:
    meta = MsgpackFileHandler(input_=os.path.join(forecast_dir, FORECAST_META)).read()
    if meta.get('format') != FORECAST_FORMAT:
        raise FormatError(f'Unsupported forecast format {meta.get("format")} in {forecast_dir}')
    handler = ManifestFileHandler(input_=os.path.join(forecast_dir, FORECAST_MANIFEST))
    dt = meta['dt_seconds']
    paths: Dict[tuple, str] = dict()
    for record in handler.read():
        if record.lead is None or record.variable not in WAVE_CHANNELS:
            raise FormatError(f'Unexpected forecast record {record.variable} in {forecast_dir}')
        paths[(record.time - record.lead * dt, record.lead, record.variable)] = \
            handler.resolve(record)
    series_list = list()
    for init in meta['init_times']:
        states = list()
        for k in range(1, meta['leads'] + 1):
            try:
                values = [read_wgf(paths[(init, k, channel)]) for channel in WAVE_CHANNELS]
            except KeyError:
                raise FormatError(f'Forecast {forecast_dir} lacks lead {k} from '
                                  f'{format_time(init)}') from None
            states.append(WaveState(*values))
        series_list.append(ForecastSeries(init, dt, states, meta['wind_source'], meta['model']))
    return series_list
