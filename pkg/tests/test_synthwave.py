import os
from dataclasses import replace

import numpy as np
import pytest

from file_handlers.manifest import ManifestFileHandler
from file_handlers.wgf import read_wgf
from tests.conftest import TINY_SYNTH
from wavecast.errors import ConfigError, DomainError
from wavecast.gridio import GridField, VarId, WaveState, global_grid, wind_direction
from wavecast.synthwave import (ALL_MANIFEST, Storm, SynthConfig, advance, background_wind,
                                gen_dataset, gen_world, make_storms, perturb_winds, split_counts,
                                step_wave, storm_wind, wind_at)
from wavecast.tensor import make_rng

SMALL = dict(lat_count=8, lon_count=16, n_steps=10, seed=5, n_storms=1, storm_radius=2.0,
             land_fraction=0.2, t_in=2, leads=1)


def with_wind(state, u: float, v: float):
    geometry = state.config.geometry
    return replace(state,
                   u10=GridField(VarId.U10, geometry, np.full(geometry.shape, u), 'm/s'),
                   v10=GridField(VarId.V10, geometry, np.full(geometry.shape, v), 'm/s'))


def with_swh(state, swh: np.ndarray):
    stack = state.wave.stack()
    stack[0] = np.where(state.ocean, swh, np.nan)
    return replace(state, wave=WaveState.from_stack(state.config.geometry, stack))


def test_same_seed_same_world():
    config = SynthConfig(**SMALL)
    a, b = gen_world(config), gen_world(config)
    assert np.array_equal(a.depth.values, b.depth.values)
    assert np.array_equal(a.wave.stack(), b.wave.stack(), equal_nan=True)
    assert a.storms == b.storms
    for _ in range(3):
        a, b = advance(a), advance(b)
    assert np.array_equal(a.wave.stack(), b.wave.stack(), equal_nan=True)


def test_storm_tracks_repeat_under_same_seed():
    config = SynthConfig(**dict(SMALL, n_storms=3))
    assert make_storms(config, make_rng(9)) == make_storms(config, make_rng(9))


def test_no_land_means_all_ocean():
    world = gen_world(SynthConfig(**dict(SMALL, land_fraction=0.0)))
    assert world.ocean.all()


def test_land_fraction_is_honoured():
    world = gen_world(SynthConfig(**SMALL))
    assert (~world.ocean).sum() == round(0.2 * 8 * 16)


@pytest.mark.parametrize('land_fraction', [1.0, 1.5, -0.1])
def test_land_fraction_out_of_range(land_fraction):
    with pytest.raises(ConfigError):
        SynthConfig(**dict(SMALL, land_fraction=land_fraction))


def test_no_ocean_left_is_domain_error():
    with pytest.raises(DomainError):
        gen_world(SynthConfig(**dict(SMALL, land_fraction=0.999)))


def test_without_storms_wind_is_background():
    config = SynthConfig(**dict(SMALL, n_storms=0))
    u_bg, v_bg = background_wind(config)
    for step in (0, 3, 17):
        u, v = wind_at(config, (), step)
        assert np.array_equal(u.values, u_bg) and np.array_equal(v.values, v_bg)


def test_vortex_centre_speed_is_peak():
    geometry = global_grid(8, 16)
    storm = Storm(row0=3.0, col0=5.0, vrow=0.0, vcol=1.0, peak=20.0, radius=2.0)
    for step in (0, 2):
        row, col = storm.center(step, geometry)
        u, v = storm_wind(storm, step, geometry)
        speed = np.hypot(u, v)[int(round(row)), int(round(col))]
        assert abs(speed - 20.0) < 1e-9


def test_storm_stays_in_latitude_band():
    geometry = global_grid(16, 32)
    storm = Storm(row0=5.0, col0=0.0, vrow=0.45, vcol=1.0, peak=20.0, radius=2.0)
    rows = [storm.center(step, geometry)[0] for step in range(200)]
    assert min(rows) >= 0.15 * 15 - 1e-9
    assert max(rows) <= 0.85 * 15 + 1e-9


def test_zero_wind_decays_geometrically():
    config = SynthConfig(**dict(SMALL, n_storms=0, background_wind=0.0))
    state = with_swh(gen_world(config), np.full((8, 16), 2.0))
    ocean = state.ocean
    for k in range(1, 6):
        state = replace(state, wave=step_wave(state))
        expected = 2.0 * (1.0 - config.relax_rate) ** k
        assert np.allclose(state.wave.swh.values[ocean], expected, rtol=1e-12, atol=0.0)


def test_constant_wind_fixed_point_and_period():
    config = SynthConfig(**dict(SMALL, n_storms=0, land_fraction=0.0))
    state = with_wind(with_swh(gen_world(config), np.zeros((8, 16))), 6.0, 8.0)
    for _ in range(200):
        state = replace(state, wave=step_wave(state))
    assert np.max(np.abs(state.wave.swh.values - 2.5)) < 1e-6
    assert np.allclose(state.wave.mwp.values, 5.5, atol=1e-12)


def test_full_relaxation_without_advection_hits_equilibrium():
    config = SynthConfig(**dict(SMALL, relax_rate=1.0, advect_fraction=0.0))
    state = advance(gen_world(config))
    speed = np.hypot(state.u10.values, state.v10.values)
    ocean = state.ocean
    assert np.allclose(state.wave.swh.values[ocean], 0.025 * speed[ocean] ** 2,
                       rtol=1e-12, atol=1e-14)


def test_wave_invariants_along_a_run():
    state = gen_world(SynthConfig(**dict(SMALL, n_storms=2)))
    ocean = state.ocean
    for _ in range(8):
        state = advance(state)
        swh = state.wave.swh.values
        assert np.all(np.isnan(swh[~ocean])) and not np.isnan(swh[ocean]).any()
        assert np.all(swh[ocean] >= 0.0)
        assert np.all(state.wave.mwp.values[ocean] >= 0.5)
        direction = wind_direction(state.u10.values, state.v10.values)
        diff = (state.wave.mwd().values - direction + 180.0) % 360.0 - 180.0
        assert np.max(np.abs(diff[ocean])) < 1e-9


def test_split_counts():
    assert split_counts(100, (0.8, 0.1, 0.1)) == (80, 10, 10)
    assert split_counts(36, (0.6, 0.2, 0.2)) == (22, 7, 7)
    with pytest.raises(ConfigError):
        split_counts(10, (0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        split_counts(2, (0.8, 0.1, 0.1))


def test_too_few_steps(tmp_path):
    with pytest.raises(ConfigError):
        gen_dataset(SynthConfig(**dict(SMALL, n_steps=3, leads=3)), (0.8, 0.1, 0.1),
                    str(tmp_path))


def test_dataset_layout(tiny_dataset_dir):
    for name in ('train.manifest', 'val.manifest', 'test.manifest', ALL_MANIFEST,
                 'dataset.msgpack.bz2', 'fields/depth.wgf', 'climatology/swh.wgf',
                 'climatology/mwp.wgf'):
        assert os.path.exists(os.path.join(tiny_dataset_dir, name)), name
    records = ManifestFileHandler(input_=os.path.join(tiny_dataset_dir, ALL_MANIFEST)).read()
    assert len(records) == 1 + 5 * TINY_SYNTH['n_steps']


def test_regeneration_is_byte_identical(tmp_path):
    config = SynthConfig(**SMALL)
    for name in ('a', 'b'):
        gen_dataset(config, (0.6, 0.2, 0.2), str(tmp_path / name))
    files_a = sorted(p.relative_to(tmp_path / 'a') for p in (tmp_path / 'a').rglob('*')
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / 'b') for p in (tmp_path / 'b').rglob('*')
                     if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes(), rel


def test_perturbed_winds(tmp_path):
    data_dir = str(tmp_path / 'data')
    gen_dataset(SynthConfig(**SMALL), (0.6, 0.2, 0.2), data_dir)
    clean = perturb_winds(data_dir, 0.0, 1, str(tmp_path / 'clean'))
    noisy = perturb_winds(data_dir, 2.0, 1, str(tmp_path / 'noisy'))
    clean_handler = ManifestFileHandler(input_=clean)
    noisy_handler = ManifestFileHandler(input_=noisy)
    clean_records, noisy_records = clean_handler.read(), noisy_handler.read()
    assert len(clean_records) == 2 * SMALL['n_steps']
    assert {r.variable for r in clean_records} == {'U10', 'V10'}
    original = ManifestFileHandler(input_=os.path.join(data_dir, ALL_MANIFEST))
    truth = {(r.time, r.variable): original.resolve(r) for r in original.read()}
    first = clean_records[0]
    assert np.array_equal(read_wgf(clean_handler.resolve(first)).values,
                          read_wgf(truth[(first.time, first.variable)]).values)
    delta = (read_wgf(noisy_handler.resolve(noisy_records[0])).values
             - read_wgf(truth[(first.time, first.variable)]).values)
    assert 0.5 < np.std(delta) < 4.0


def test_negative_noise_rejected(tiny_dataset_dir, tmp_path):
    with pytest.raises(ConfigError):
        perturb_winds(tiny_dataset_dir, -1.0, 1, str(tmp_path))
